// Command-line driver: corpus generation, two-stage training, evaluation,
// and the ablation matrix.

#include <CLI11.hpp>

#include "mlcap/harness.hpp"

#include <cstdio>
#include <iostream>

namespace {

// Exit codes: 0 ok, 1 usage/config, 2 I/O or state, 3 numeric failure.
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNumeric = 3;

mlcap::RunConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    return mlcap::load_run_config(path);
}

void print_table(const mlcap::EvalReport& rep) {
    std::printf("%-8s %10s %10s %10s\n", "level", "CIDEr-R", "ROUGE-L", "METEOR");
    std::printf("%-8s %10.2f %10.2f %10.2f\n", "object", rep.object_level.cider_r,
                rep.object_level.rouge_l, rep.object_level.meteor);
    std::printf("%-8s %10.2f %10.2f %10.2f\n", "part", rep.part_level.cider_r,
                rep.part_level.rouge_l, rep.part_level.meteor);
}

int run(int argc, char** argv) {
    CLI::App app{"synthetic-scene instance captioning pipeline"};
    app.require_subcommand(1);

    std::string config_path, seg_ckpt, cap_ckpt, vocab_path, split = "test", seeds_arg = "1,2,3";
    bool resume = false, self_eval = false;

    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    gen->add_option("--config", config_path, "run config file");

    auto* train_seg = app.add_subcommand("train-seg", "stage 1: train the segmenter");
    train_seg->add_option("--config", config_path, "run config file");
    train_seg->add_flag("--resume", resume, "continue from the last checkpoint");

    auto* train_cap = app.add_subcommand("train-cap", "stage 2: train captioners (frozen segmenter)");
    train_cap->add_option("--config", config_path, "run config file");
    train_cap->add_option("--seg-ckpt", seg_ckpt, "segmenter checkpoint")->required();
    train_cap->add_flag("--resume", resume, "continue from the last checkpoint");

    auto* eval = app.add_subcommand("eval", "evaluate a trained model on a split");
    eval->add_option("--config", config_path, "run config file");
    eval->add_option("--seg-ckpt", seg_ckpt, "segmenter checkpoint");
    eval->add_option("--cap-ckpt", cap_ckpt, "captioner checkpoint");
    eval->add_option("--vocab", vocab_path, "vocabulary JSON written by train-cap");
    eval->add_option("--split", split, "train | val | test");
    eval->add_flag("--self", self_eval, "score ground-truth captions against themselves");

    auto* ablate_cmd = app.add_subcommand("ablate", "run the 7-configuration ablation matrix");
    ablate_cmd->add_option("--config", config_path, "run config file");
    ablate_cmd->add_option("--seeds", seeds_arg, "comma-separated seed list");

    CLI11_PARSE(app, argc, argv);
    mlcap::RunConfig cfg = load_config(config_path);
    cfg.validate();

    if (gen->parsed()) {
        mlcap::CorpusSpec spec;
        spec.num_scenes = cfg.num_scenes;
        spec.grammar_seed = cfg.seed;
        spec.geometry_seed = cfg.seed;
        mlcap::Corpus corpus = mlcap::generate_corpus(spec);
        mlcap::serialize_corpus(corpus, cfg.corpus_dir);
        std::printf("wrote %zu scenes to %s\n", corpus.scenes.size(), cfg.corpus_dir.c_str());
        return 0;
    }

    mlcap::Corpus corpus = mlcap::load_corpus(cfg.corpus_dir);

    if (train_seg->parsed()) {
        mlcap::Segmenter seg(cfg.segmenter_config(), cfg.seed);
        auto summary = mlcap::train_segmenter(corpus, seg, cfg, resume);
        std::printf("segmenter: %d epochs, loss %.4f -> %.4f\n", cfg.seg_epochs,
                    summary.first_epoch_loss, summary.final_epoch_loss);
        return 0;
    }

    if (train_cap->parsed()) {
        mlcap::Segmenter seg(cfg.segmenter_config(), cfg.seed);
        mlcap::nn::load_checkpoint(seg_ckpt, seg.params());
        seg.params().set_trainable(false);
        mlcap::Tokenizer tok = mlcap::Tokenizer::build(corpus);
        mlcap::CaptionStack stack(cfg.captioner_config(tok.vocab_size()), cfg.num_semantic,
                                  cfg.seed);
        auto summary = mlcap::train_captioner(corpus, seg, stack, tok, cfg, resume);
        std::printf("captioner: %d epochs, loss %.4f -> %.4f\n", cfg.cap_epochs,
                    summary.first_epoch_loss, summary.final_epoch_loss);
        return 0;
    }

    if (eval->parsed()) {
        mlcap::EvalReport rep;
        if (self_eval) {
            rep = mlcap::self_evaluation(corpus, mlcap::split_from_string(split));
        } else {
            if (seg_ckpt.empty() || cap_ckpt.empty() || vocab_path.empty())
                throw CLI::ValidationError(
                    "eval", "--seg-ckpt, --cap-ckpt and --vocab are required without --self");
            mlcap::Segmenter seg(cfg.segmenter_config(), cfg.seed);
            mlcap::nn::load_checkpoint(seg_ckpt, seg.params());
            mlcap::Tokenizer tok = mlcap::Tokenizer::load(vocab_path);
            mlcap::CaptionStack stack(cfg.captioner_config(tok.vocab_size()), cfg.num_semantic,
                                      cfg.seed);
            mlcap::nn::load_checkpoint(cap_ckpt, stack.all);
            rep = mlcap::evaluate(corpus, mlcap::split_from_string(split), seg, stack, tok, cfg);
        }
        mlcap::write_eval_outputs(rep, cfg);
        print_table(rep);
        return 0;
    }

    if (ablate_cmd->parsed()) {
        std::vector<uint64_t> seeds;
        std::stringstream ss(seeds_arg);
        std::string item;
        while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
        if (seeds.empty()) throw CLI::ValidationError("ablate", "no seeds given");
        auto rows = mlcap::ablate(corpus, cfg, seeds);
        std::printf("%-16s %6s %-7s %10s\n", "config", "seed", "level", "CIDEr-R");
        for (const auto& r : rows)
            std::printf("%-16s %6llu %-7s %10.2f\n", r.config.c_str(),
                        static_cast<unsigned long long>(r.seed), r.level.c_str(), r.cider_r);
        return 0;
    }
    return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        std::fprintf(stderr, "error: %s\n", msg.c_str());
        return msg.find("non-finite") != std::string::npos ? kExitNumeric : kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}
