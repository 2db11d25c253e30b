#ifndef MLCAP_HARNESS_HPP
#define MLCAP_HARNESS_HPP

#include "mlcap/captioner.hpp"
#include "mlcap/consistency.hpp"
#include "mlcap/corpus.hpp"
#include "mlcap/hungarian.hpp"
#include "mlcap/metrics.hpp"
#include "mlcap/segmenter.hpp"
#include "mlcap/tokenizer.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mlcap {

// --------------------------------------------------------------- RunConfig

struct RunConfig {
    std::string corpus_dir = "corpus";
    std::string out_dir = "run";
    uint64_t seed = 1;
    int num_scenes = 200;

    double voxel_size = 0.1;
    double merge_threshold = 0.25;

    int batch_size_scenes = 6;
    double lr = 0.005;
    double lr_min = 1e-4;
    double weight_decay = 0.01;
    int seg_epochs = 200;
    int cap_epochs = 100;
    int checkpoint_every = 20;

    int num_queries = 100;
    int feature_dim = 128;
    int max_caption_len = 32;
    int beams = 5;
    int num_semantic = 64;

    bool semantic_on = true;
    bool textual_on = true;
    bool context_features_on = true;
    std::string share_direction = "part2obj";  // none | part2obj | obj2part
    std::string textual_distance = "cosine";
    double w_caption = 1.0, w_semantic = 0.1, w_textual = 0.1;

    void validate() const {
        if (num_scenes < 1 || batch_size_scenes < 1 || seg_epochs < 0 || cap_epochs < 0 ||
            beams < 1 || max_caption_len < 2 || voxel_size <= 0.0)
            throw std::invalid_argument("config: invalid values");
        share_direction_from_string(share_direction);
        textual_distance_from_string(textual_distance);
    }

    SegmenterConfig segmenter_config() const {
        SegmenterConfig sc;
        sc.num_queries = num_queries;
        sc.feature_dim = feature_dim;
        return sc;
    }

    CaptionerConfig captioner_config(int vocab_size) const {
        CaptionerConfig cc;
        cc.vocab_size = vocab_size;
        cc.max_len = max_caption_len;
        cc.query_dim = feature_dim;
        cc.feature_dim = feature_dim;
        cc.beams = beams;
        return cc;
    }

    LossWeights loss_weights() const {
        LossWeights w;
        w.caption = w_caption;
        w.semantic = semantic_on ? w_semantic : 0.0;
        w.textual = textual_on ? w_textual : 0.0;
        return w;
    }
};

namespace detail_cfg {

template <class F>
void each_key(RunConfig& c, F&& f) {
    f("corpus_dir", c.corpus_dir);
    f("out_dir", c.out_dir);
    f("seed", c.seed);
    f("num_scenes", c.num_scenes);
    f("voxel_size", c.voxel_size);
    f("merge_threshold", c.merge_threshold);
    f("batch_size_scenes", c.batch_size_scenes);
    f("lr", c.lr);
    f("lr_min", c.lr_min);
    f("weight_decay", c.weight_decay);
    f("seg_epochs", c.seg_epochs);
    f("cap_epochs", c.cap_epochs);
    f("checkpoint_every", c.checkpoint_every);
    f("num_queries", c.num_queries);
    f("feature_dim", c.feature_dim);
    f("max_caption_len", c.max_caption_len);
    f("beams", c.beams);
    f("num_semantic", c.num_semantic);
    f("semantic_on", c.semantic_on);
    f("textual_on", c.textual_on);
    f("context_features_on", c.context_features_on);
    f("share_direction", c.share_direction);
    f("textual_distance", c.textual_distance);
    f("w_caption", c.w_caption);
    f("w_semantic", c.w_semantic);
    f("w_textual", c.w_textual);
}

inline void parse_into(const std::string& raw, std::string& out) { out = raw; }
inline void parse_into(const std::string& raw, double& out) { out = std::stod(raw); }
inline void parse_into(const std::string& raw, int& out) { out = std::stoi(raw); }
inline void parse_into(const std::string& raw, uint64_t& out) { out = std::stoull(raw); }
inline void parse_into(const std::string& raw, bool& out) {
    if (raw == "true" || raw == "1")
        out = true;
    else if (raw == "false" || raw == "0")
        out = false;
    else
        throw std::invalid_argument("config: bad boolean '" + raw + "'");
}

inline std::string render(const std::string& v) { return v; }
inline std::string render(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
inline std::string render(int v) { return std::to_string(v); }
inline std::string render(uint64_t v) { return std::to_string(v); }
inline std::string render(bool v) { return v ? "true" : "false"; }

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace detail_cfg

// Human-readable `key = value` file; '#' starts a comment.
inline void apply_config_line(RunConfig& c, const std::string& line) {
    std::string body = line.substr(0, line.find('#'));
    if (detail_cfg::trim(body).empty()) return;
    size_t eq = body.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: expected key = value");
    std::string key = detail_cfg::trim(body.substr(0, eq));
    std::string val = detail_cfg::trim(body.substr(eq + 1));
    bool found = false;
    detail_cfg::each_key(c, [&](const char* name, auto& field) {
        if (key == name) {
            detail_cfg::parse_into(val, field);
            found = true;
        }
    });
    if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    RunConfig c;
    std::string line;
    while (std::getline(is, line)) apply_config_line(c, line);
    c.validate();
    return c;
}

inline std::string render_run_config(const RunConfig& c) {
    std::ostringstream os;
    detail_cfg::each_key(const_cast<RunConfig&>(c), [&](const char* name, auto& field) {
        os << name << " = " << detail_cfg::render(field) << "\n";
    });
    return os.str();
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
    std::ofstream(path) << render_run_config(c);
}

inline uint64_t config_hash(const RunConfig& c) { return fnv1a(render_run_config(c)); }

// ------------------------------------------------------------------ splits

enum class Split { train, val, test };

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split: " + s);
}

// Stable 80/10/10 assignment by scene id hash, independent of corpus order.
inline Split split_of(const std::string& scene_id) {
    uint64_t bucket = mix64(fnv1a(scene_id) ^ fnv1a("split-v1")) % 10;
    if (bucket < 8) return Split::train;
    return bucket == 8 ? Split::val : Split::test;
}

inline std::vector<size_t> split_indices(const Corpus& corpus, Split s) {
    std::vector<size_t> out;
    for (size_t i = 0; i < corpus.scenes.size(); ++i)
        if (split_of(corpus.scenes[i].id) == s) out.push_back(i);
    return out;
}

// ------------------------------------------------------- caption model set

// Everything trained in stage 2, sharing one parameter registry: the two
// caption decoders with their projections, plus the consistency heads.
struct CaptionStack {
    CaptionerConfig cap_cfg;
    ProjectorConfig proj_cfg;
    Captioner captioner;
    nn::ParamStore consistency_params;
    SemanticHead sem_obj, sem_part;
    Projector txt_obj, txt_part;
    nn::ParamStore all;  // aliases of every parameter above

    CaptionStack(const CaptionerConfig& cc, int num_semantic, uint64_t seed)
        : cap_cfg(cc), proj_cfg(projector_config(cc)), captioner(cc, seed) {
        auto rng = make_rng(seed, "consistency-init");
        sem_obj = SemanticHead(consistency_params, "cons.sem_obj", proj_cfg, num_semantic, rng);
        sem_part = SemanticHead(consistency_params, "cons.sem_part", proj_cfg, num_semantic, rng);
        txt_obj = Projector(consistency_params, "cons.txt_obj", proj_cfg, rng);
        txt_part = Projector(consistency_params, "cons.txt_part", proj_cfg, rng);
        for (const auto& n : captioner.params().names()) all.attach(n, captioner.params().at(n));
        for (const auto& n : consistency_params.names())
            all.attach(n, consistency_params.at(n));
    }

    static ProjectorConfig projector_config(const CaptionerConfig& cc) {
        ProjectorConfig pc;
        pc.in_dim = cc.embed_dim;
        pc.max_len = cc.max_len + 1;
        return pc;
    }
};

// ------------------------------------------------- frozen segmenter outputs

// One ground-truth object with the prediction Hungarian-matched to it, plus
// everything caption training needs. Extracted once per scene because the
// segmenter is frozen in stage 2.
struct InstanceSample {
    std::string scene_id;
    int object_id = 0;
    Mat refined_query;  // 1 x D
    Mat context_rows;   // segments-in-mask x D, possibly 0 rows
    double box_iou = 0.0;
    std::array<std::vector<int>, kCaptionVariants> obj_tokens, part_tokens;
    std::vector<std::string> obj_refs, part_refs;
};

inline std::vector<InstanceSample> extract_caption_samples(const SyntheticScene& scene,
                                                           const Segmenter& seg,
                                                           const Tokenizer& tok,
                                                           const RunConfig& cfg) {
    VoxelScene vox = voxelize(scene.points, scene.colors, cfg.voxel_size);
    SegmentTable segments = oversegment(vox, cfg.merge_threshold);
    SceneEncoding enc = seg.predict_instances(vox);
    auto gt_masks = gt_voxel_masks(scene, vox);
    Assignment match = hungarian_match(matching_cost(gt_masks, enc.predictions));

    std::vector<InstanceSample> out;
    for (size_t g = 0; g < scene.objects.size(); ++g) {
        const SceneObject& obj = scene.objects[g];
        const InstancePrediction& pred =
            enc.predictions[static_cast<size_t>(match.gt_to_pred[g])];
        InstanceSample s;
        s.scene_id = scene.id;
        s.object_id = obj.id;
        s.refined_query = pred.refined_query.transpose();
        s.context_rows = segment_context_rows(enc.dense_features, segments, pred.mask);
        bool pred_empty = std::none_of(pred.mask.begin(), pred.mask.end(),
                                       [](uint8_t m) { return m != 0; });
        bool gt_empty = std::none_of(gt_masks[g].begin(), gt_masks[g].end(),
                                     [](uint8_t m) { return m != 0; });
        s.box_iou = (pred_empty || gt_empty)
                        ? 0.0
                        : aabb_iou(mask_to_aabb(pred.mask, vox), mask_to_aabb(gt_masks[g], vox));
        for (int v = 0; v < kCaptionVariants; ++v) {
            s.obj_tokens[static_cast<size_t>(v)] =
                tok.encode(obj.captions.object[static_cast<size_t>(v)]);
            s.part_tokens[static_cast<size_t>(v)] =
                tok.encode(obj.captions.part[static_cast<size_t>(v)]);
            s.obj_refs.push_back(obj.captions.object[static_cast<size_t>(v)]);
            s.part_refs.push_back(obj.captions.part[static_cast<size_t>(v)]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// -------------------------------------------------- per-instance forward

struct InstanceForward {
    TeacherForced obj, part;
    std::vector<int> obj_targets, part_targets;
};

// Teacher-forced pass over both caption levels for one instance, honoring
// the ablation flags (context features, sharing direction).
inline InstanceForward run_instance(Tape& t, const CaptionStack& stack,
                                    const InstanceSample& sample, int variant,
                                    const RunConfig& cfg) {
    const Captioner& cap = stack.captioner;
    Var qo = cap.object_query(t, ag::make_const(sample.refined_query));
    Var qp = cap.part_query(t, ag::make_const(sample.refined_query));
    PaddedContext obj_ctx, part_ctx;
    if (cfg.context_features_on && sample.context_rows.rows() > 0) {
        Var so = cap.object_context(t, sample.context_rows);
        Var sp = cap.part_context(t, sample.context_rows);
        obj_ctx = pad_context(t, so, so->rows());
        part_ctx = pad_context(t, sp, sp->rows());
    }

    InstanceForward out;
    out.obj_targets = sample.obj_tokens[static_cast<size_t>(variant)];
    out.part_targets = sample.part_tokens[static_cast<size_t>(variant)];
    auto dir = share_direction_from_string(cfg.share_direction);

    if (dir == ShareDirection::part_to_object) {
        out.part = cap.part_decoder().forward(t, qp, part_ctx.rows,
                                              part_ctx.rows ? &part_ctx.valid : nullptr,
                                              out.part_targets);
        PaddedContext shared = cap.share_hidden(t, out.part.hidden, obj_ctx);
        out.obj = cap.object_decoder().forward(t, qo, shared.rows, &shared.valid,
                                               out.obj_targets);
    } else if (dir == ShareDirection::object_to_part) {
        out.obj = cap.object_decoder().forward(t, qo, obj_ctx.rows,
                                               obj_ctx.rows ? &obj_ctx.valid : nullptr,
                                               out.obj_targets);
        PaddedContext shared = cap.share_hidden(t, out.obj.hidden, part_ctx);
        out.part = cap.part_decoder().forward(t, qp, shared.rows, &shared.valid,
                                              out.part_targets);
    } else {
        out.obj = cap.object_decoder().forward(t, qo, obj_ctx.rows,
                                               obj_ctx.rows ? &obj_ctx.valid : nullptr,
                                               out.obj_targets);
        out.part = cap.part_decoder().forward(t, qp, part_ctx.rows,
                                              part_ctx.rows ? &part_ctx.valid : nullptr,
                                              out.part_targets);
    }
    return out;
}

// Batch loss over all matched instances of a scene batch. The consistency
// terms are only added to the graph when their flags are on, so disabled
// paths receive no gradient at all.
inline LossBreakdown batch_loss(Tape& t, const CaptionStack& stack,
                                const std::vector<const InstanceSample*>& batch, int variant,
                                const RunConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    std::vector<Var> cap_terms, sem_terms, txt_terms;
    auto dist = textual_distance_from_string(cfg.textual_distance);
    for (const InstanceSample* s : batch) {
        InstanceForward fwd = run_instance(t, stack, *s, variant, cfg);
        cap_terms.push_back(caption_loss(t, fwd.obj.logits, fwd.obj_targets, fwd.part.logits,
                                         fwd.part_targets));
        // Consistency needs hidden states from both levels; an uncaptioned
        // level has none, and such instances contribute zero loss anyway.
        if (fwd.obj_targets.empty() || fwd.part_targets.empty()) continue;
        if (cfg.semantic_on)
            sem_terms.push_back(semantic_consistency_loss(
                t, stack.sem_obj(t, fwd.obj.hidden), stack.sem_part(t, fwd.part.hidden)));
        if (cfg.textual_on)
            txt_terms.push_back(textual_consistency_loss(t, stack.txt_obj(t, fwd.obj.hidden),
                                                         stack.txt_part(t, fwd.part.hidden),
                                                         dist));
    }
    auto mean_of = [&](std::vector<Var>& terms) -> Var {
        if (terms.empty()) return ag::make_const(Mat::Zero(1, 1));
        std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
        return ag::weighted_sum(t, terms, w);
    };
    return total_loss(t, mean_of(cap_terms), mean_of(sem_terms), mean_of(txt_terms),
                      cfg.loss_weights());
}

// Fraction of non-PAD target positions predicted correctly under teacher
// forcing, across both levels and all samples (reference variant 0).
inline double teacher_forced_accuracy(const CaptionStack& stack,
                                      const std::vector<InstanceSample>& samples,
                                      const RunConfig& cfg) {
    int64_t hit = 0, total = 0;
    auto count = [&](const Var& logits, const std::vector<int>& targets) {
        for (size_t i = 0; i < targets.size(); ++i) {
            if (targets[i] == Tokenizer::PAD) continue;
            Eigen::Index best;
            logits->val.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
            hit += (static_cast<int>(best) == targets[i]);
            total += 1;
        }
    };
    for (const auto& s : samples) {
        Tape t;
        InstanceForward fwd = run_instance(t, stack, s, 0, cfg);
        count(fwd.obj.logits, fwd.obj_targets);
        count(fwd.part.logits, fwd.part_targets);
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

// --------------------------------------------------------------- training

namespace detail_train {

inline void append_csv(const std::string& path, const std::string& header,
                       const std::string& row) {
    bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::app);
    if (fresh) os << header << "\n";
    os << row << "\n";
}

inline void nan_dump(const RunConfig& cfg, const std::string& stage, int epoch, double loss) {
    nlohmann::json j;
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["loss"] = loss;
    j["config"] = render_run_config(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir + "/nan_dump.json") << j.dump(2) << "\n";
}

struct EpochState {
    int next_epoch = 0;
};

inline void save_state(const std::string& path, const EpochState& s) {
    nlohmann::json j;
    j["next_epoch"] = s.next_epoch;
    std::ofstream(path) << j.dump() << "\n";
}

inline EpochState load_state(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("state: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    return {j.at("next_epoch").get<int>()};
}

}  // namespace detail_train

struct TrainSummary {
    double first_epoch_loss = 0.0;
    double final_epoch_loss = 0.0;
    std::vector<double> epoch_losses;
};

// Stage 1: train the segmenter on the train split. Writes segmenter.ckpt,
// a config snapshot, and seg_train_log.csv under cfg.out_dir. With
// resume=true, continues from the last saved epoch.
// `stop_after` (if >= 0) caps how many epochs this call runs, simulating an
// interrupted job; a later resume=true call picks up from the checkpoint.
inline TrainSummary train_segmenter(const Corpus& corpus, Segmenter& seg, const RunConfig& cfg,
                                    bool resume = false, int stop_after = -1) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const std::string ckpt = cfg.out_dir + "/segmenter.ckpt";
    const std::string state_path = cfg.out_dir + "/segmenter.state.json";
    const std::string log_path = cfg.out_dir + "/seg_train_log.csv";

    auto train_idx = split_indices(corpus, Split::train);
    if (train_idx.empty()) throw std::runtime_error("train: empty train split");

    // Per-scene supervision targets are fixed; precompute them.
    struct SceneData {
        VoxelScene vox;
        std::vector<std::vector<uint8_t>> masks;
        std::vector<int> classes;
    };
    Grammar grammar = default_grammar();
    auto class_index = [&](const std::string& label) {
        auto it = std::find(grammar.classes.begin(), grammar.classes.end(), label);
        if (it == grammar.classes.end()) throw std::runtime_error("unknown class " + label);
        return static_cast<int>(it - grammar.classes.begin());
    };
    std::vector<SceneData> data;
    for (size_t i : train_idx) {
        const auto& scene = corpus.scenes[i];
        SceneData d;
        d.vox = voxelize(scene.points, scene.colors, cfg.voxel_size);
        d.masks = gt_voxel_masks(scene, d.vox);
        for (const auto& obj : scene.objects) d.classes.push_back(class_index(obj.class_label));
        data.push_back(std::move(d));
    }

    nn::AdamW opt;
    opt.weight_decay = cfg.weight_decay;
    int start_epoch = 0;
    if (resume && std::filesystem::exists(state_path)) {
        start_epoch = detail_train::load_state(state_path).next_epoch;
        nn::load_checkpoint(ckpt, seg.params(), &opt);
    }
    const int batches_per_epoch =
        (static_cast<int>(data.size()) + cfg.batch_size_scenes - 1) / cfg.batch_size_scenes;
    const int64_t total_steps = static_cast<int64_t>(cfg.seg_epochs) * batches_per_epoch;

    TrainSummary summary;
    const int limit =
        stop_after >= 0 ? std::min(stop_after, cfg.seg_epochs) : cfg.seg_epochs;
    const double logit_thr =
        std::log(seg.config().mask_threshold / (1.0 - seg.config().mask_threshold));
    for (int epoch = start_epoch; epoch < limit; ++epoch) {
        std::vector<size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0u);
        auto shuffle_rng = make_rng(cfg.seed, "seg-batch-order", static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            seg.params().zero_grad();
            double batch_value = 0.0;
            int count = 0;
            for (int k = 0; k < cfg.batch_size_scenes; ++k) {
                size_t pos = static_cast<size_t>(b) * static_cast<size_t>(cfg.batch_size_scenes) +
                             static_cast<size_t>(k);
                if (pos >= order.size()) break;
                const SceneData& d = data[order[pos]];
                Tape t;
                SegmenterForward fwd = seg.forward(t, d.vox);
                // Match on the current binarized masks.
                std::vector<InstancePrediction> preds(
                    static_cast<size_t>(fwd.mask_logits->rows()));
                for (Eigen::Index q = 0; q < fwd.mask_logits->rows(); ++q) {
                    auto& mask = preds[static_cast<size_t>(q)].mask;
                    mask.resize(static_cast<size_t>(fwd.mask_logits->cols()));
                    for (Eigen::Index v = 0; v < fwd.mask_logits->cols(); ++v)
                        mask[static_cast<size_t>(v)] = fwd.mask_logits->val(q, v) > logit_thr;
                }
                Assignment match = hungarian_match(matching_cost(d.masks, preds));
                Var loss = segmenter_loss(t, seg, fwd, d.masks, d.classes, match);
                double v = loss->val(0, 0);
                if (!std::isfinite(v)) {
                    detail_train::nan_dump(cfg, "segmenter", epoch, v);
                    throw std::runtime_error("train-seg: non-finite loss, dump written");
                }
                t.backward(loss);
                batch_value += v;
                ++count;
            }
            // Gradients from the batch sum; normalize to a per-scene mean.
            for (const auto& name : seg.params().names())
                seg.params().at(name)->grad /= static_cast<double>(count);
            int64_t step = static_cast<int64_t>(epoch) * batches_per_epoch + b;
            opt.lr = nn::cosine_lr(cfg.lr, cfg.lr_min, step, total_steps);
            opt.step(seg.params());
            epoch_loss += batch_value / static_cast<double>(count);
        }
        epoch_loss /= static_cast<double>(batches_per_epoch);
        summary.epoch_losses.push_back(epoch_loss);
        if (epoch == start_epoch) summary.first_epoch_loss = epoch_loss;
        summary.final_epoch_loss = epoch_loss;
        detail_train::append_csv(log_path, "epoch,loss,lr",
                                 std::to_string(epoch) + "," + std::to_string(epoch_loss) + "," +
                                     std::to_string(opt.lr));
        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == limit) {
            nn::save_checkpoint(ckpt, seg.params(), &opt);
            detail_train::save_state(state_path, {epoch + 1});
        }
    }
    if (limit == 0 || start_epoch >= limit) nn::save_checkpoint(ckpt, seg.params(), &opt);
    save_run_config(cfg, cfg.out_dir + "/segmenter.config");
    return summary;
}

// Stage 2: freeze the segmenter, extract caption samples once, and train the
// caption stack. Writes captioner.ckpt, vocab.json, cap_train_log.csv.
inline TrainSummary train_captioner(const Corpus& corpus, const Segmenter& seg,
                                    CaptionStack& stack, const Tokenizer& tok,
                                    const RunConfig& cfg, bool resume = false,
                                    int stop_after = -1) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const std::string ckpt = cfg.out_dir + "/captioner.ckpt";
    const std::string state_path = cfg.out_dir + "/captioner.state.json";
    const std::string log_path = cfg.out_dir + "/cap_train_log.csv";

    auto train_idx = split_indices(corpus, Split::train);
    if (train_idx.empty()) throw std::runtime_error("train: empty train split");

    // Frozen segmenter: its outputs are constants of stage 2.
    std::vector<std::vector<InstanceSample>> per_scene;
    for (size_t i : train_idx)
        per_scene.push_back(extract_caption_samples(corpus.scenes[i], seg, tok, cfg));

    nn::AdamW opt;
    opt.weight_decay = cfg.weight_decay;
    int start_epoch = 0;
    if (resume && std::filesystem::exists(state_path)) {
        start_epoch = detail_train::load_state(state_path).next_epoch;
        nn::load_checkpoint(ckpt, stack.all, &opt);
    }
    const int batches_per_epoch = (static_cast<int>(per_scene.size()) + cfg.batch_size_scenes - 1) /
                                  cfg.batch_size_scenes;
    const int64_t total_steps = static_cast<int64_t>(cfg.cap_epochs) * batches_per_epoch;

    TrainSummary summary;
    const int limit =
        stop_after >= 0 ? std::min(stop_after, cfg.cap_epochs) : cfg.cap_epochs;
    for (int epoch = start_epoch; epoch < limit; ++epoch) {
        std::vector<size_t> order(per_scene.size());
        std::iota(order.begin(), order.end(), 0u);
        auto shuffle_rng = make_rng(cfg.seed, "cap-batch-order", static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        // Reference variant sampled per epoch ("sample from the captions").
        int variant = static_cast<int>(
            uniform_int(shuffle_rng, 0, kCaptionVariants - 1));

        double epoch_loss = 0.0, epoch_cap = 0.0, epoch_sem = 0.0, epoch_txt = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            std::vector<const InstanceSample*> batch;
            for (int k = 0; k < cfg.batch_size_scenes; ++k) {
                size_t pos = static_cast<size_t>(b) * static_cast<size_t>(cfg.batch_size_scenes) +
                             static_cast<size_t>(k);
                if (pos >= order.size()) break;
                for (const auto& s : per_scene[order[pos]]) batch.push_back(&s);
            }
            if (batch.empty()) continue;
            stack.all.zero_grad();
            Tape t;
            LossBreakdown loss;
            try {
                loss = batch_loss(t, stack, batch, variant, cfg);
            } catch (const std::runtime_error&) {
                detail_train::nan_dump(cfg, "captioner", epoch,
                                       std::numeric_limits<double>::quiet_NaN());
                throw;
            }
            t.backward(loss.total);
            int64_t step = static_cast<int64_t>(epoch) * batches_per_epoch + b;
            opt.lr = nn::cosine_lr(cfg.lr, cfg.lr_min, step, total_steps);
            opt.step(stack.all);
            epoch_loss += loss.total_value();
            epoch_cap += loss.caption_value();
            epoch_sem += loss.semantic_value();
            epoch_txt += loss.textual_value();
        }
        epoch_loss /= batches_per_epoch;
        epoch_cap /= batches_per_epoch;
        epoch_sem /= batches_per_epoch;
        epoch_txt /= batches_per_epoch;
        summary.epoch_losses.push_back(epoch_loss);
        if (epoch == start_epoch) summary.first_epoch_loss = epoch_loss;
        summary.final_epoch_loss = epoch_loss;
        detail_train::append_csv(
            log_path, "epoch,total,caption,semantic,textual,lr",
            std::to_string(epoch) + "," + std::to_string(epoch_loss) + "," +
                std::to_string(epoch_cap) + "," + std::to_string(epoch_sem) + "," +
                std::to_string(epoch_txt) + "," + std::to_string(opt.lr));
        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == limit) {
            nn::save_checkpoint(ckpt, stack.all, &opt);
            detail_train::save_state(state_path, {epoch + 1});
        }
    }
    if (limit == 0 || start_epoch >= limit) nn::save_checkpoint(ckpt, stack.all, &opt);
    tok.save(cfg.out_dir + "/vocab.json");
    save_run_config(cfg, cfg.out_dir + "/captioner.config");
    return summary;
}

// -------------------------------------------------------------- evaluation

struct EvalReport {
    MetricReport object_level, part_level;
    nlohmann::json predictions = nlohmann::json::array();

    // The six Table-2-shaped cells: 3 metrics x 2 levels.
    nlohmann::json table() const {
        return {{"object", {{"cider_r", object_level.cider_r},
                            {"rouge_l", object_level.rouge_l},
                            {"meteor", object_level.meteor}}},
                {"part", {{"cider_r", part_level.cider_r},
                          {"rouge_l", part_level.rouge_l},
                          {"meteor", part_level.meteor}}}};
    }
};

// Decodes captions (5-beam by default) for each ground-truth instance's
// Hungarian-matched prediction and computes IoU-gated metrics per level.
inline EvalReport evaluate(const Corpus& corpus, Split split, const Segmenter& seg,
                           const CaptionStack& stack, const Tokenizer& tok,
                           const RunConfig& cfg) {
    auto idx = split_indices(corpus, split);
    if (idx.empty()) throw std::runtime_error("evaluate: empty split");
    auto dir = share_direction_from_string(cfg.share_direction);
    const Captioner& cap = stack.captioner;

    std::vector<GatedInstance> obj_inst, part_inst;
    EvalReport rep;
    for (size_t i : idx) {
        auto samples = extract_caption_samples(corpus.scenes[i], seg, tok, cfg);
        for (const auto& s : samples) {
            Tape t;
            Var qo = cap.object_query(t, ag::make_const(s.refined_query));
            Var qp = cap.part_query(t, ag::make_const(s.refined_query));
            PaddedContext obj_ctx, part_ctx;
            if (cfg.context_features_on && s.context_rows.rows() > 0) {
                Var so = cap.object_context(t, s.context_rows);
                Var sp = cap.part_context(t, s.context_rows);
                obj_ctx = pad_context(t, so, so->rows());
                part_ctx = pad_context(t, sp, sp->rows());
            }
            BeamHypothesis obj_hyp, part_hyp;
            if (dir == ShareDirection::part_to_object) {
                part_hyp = cap.part_decoder().decode(
                    qp, part_ctx.rows, part_ctx.rows ? &part_ctx.valid : nullptr, cfg.beams);
                PaddedContext shared = cap.share_hidden(
                    t, ag::make_const(part_hyp.hidden), obj_ctx);
                obj_hyp = cap.object_decoder().decode(qo, shared.rows, &shared.valid, cfg.beams);
            } else if (dir == ShareDirection::object_to_part) {
                obj_hyp = cap.object_decoder().decode(
                    qo, obj_ctx.rows, obj_ctx.rows ? &obj_ctx.valid : nullptr, cfg.beams);
                PaddedContext shared = cap.share_hidden(
                    t, ag::make_const(obj_hyp.hidden), part_ctx);
                part_hyp = cap.part_decoder().decode(qp, shared.rows, &shared.valid, cfg.beams);
            } else {
                obj_hyp = cap.object_decoder().decode(
                    qo, obj_ctx.rows, obj_ctx.rows ? &obj_ctx.valid : nullptr, cfg.beams);
                part_hyp = cap.part_decoder().decode(
                    qp, part_ctx.rows, part_ctx.rows ? &part_ctx.valid : nullptr, cfg.beams);
            }
            std::string obj_text = tok.decode(obj_hyp.tokens);
            std::string part_text = tok.decode(part_hyp.tokens);
            obj_inst.push_back({s.obj_refs, obj_text, s.box_iou});
            part_inst.push_back({s.part_refs, part_text, s.box_iou});
            rep.predictions.push_back({{"scene", s.scene_id},
                                       {"object", s.object_id},
                                       {"iou", s.box_iou},
                                       {"object_caption", obj_text},
                                       {"part_caption", part_text}});
        }
    }
    rep.object_level = gated_corpus_scores(obj_inst);
    rep.part_level = gated_corpus_scores(part_inst);
    return rep;
}

// Ceiling check: ground-truth captions as predictions with perfect boxes.
inline EvalReport self_evaluation(const Corpus& corpus, Split split) {
    auto idx = split_indices(corpus, split);
    if (idx.empty()) throw std::runtime_error("evaluate: empty split");
    EvalReport rep;
    std::vector<GatedInstance> obj_inst, part_inst;
    for (size_t i : idx)
        for (const auto& obj : corpus.scenes[i].objects) {
            std::vector<std::string> orefs(obj.captions.object.begin(),
                                           obj.captions.object.end());
            std::vector<std::string> prefs(obj.captions.part.begin(), obj.captions.part.end());
            obj_inst.push_back({orefs, orefs[0], 1.0});
            part_inst.push_back({prefs, prefs[0], 1.0});
        }
    rep.object_level = gated_corpus_scores(obj_inst);
    rep.part_level = gated_corpus_scores(part_inst);
    return rep;
}

inline void write_eval_outputs(const EvalReport& rep, const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    nlohmann::json j;
    j["table"] = rep.table();
    j["object_gated_in"] = rep.object_level.gated_in;
    j["part_gated_in"] = rep.part_level.gated_in;
    j["instances"] = rep.object_level.total;
    j["config_hash"] = config_hash(cfg);
    std::ofstream(cfg.out_dir + "/metrics.json") << j.dump(2) << "\n";
    std::ofstream(cfg.out_dir + "/predictions.json") << rep.predictions.dump(2) << "\n";
}

// ---------------------------------------------------------------- ablation

struct AblationVariant {
    std::string name;
    std::string share_direction;
    bool semantic_on, textual_on, context_features_on;
};

// The experiment matrix: baseline, each consistency loss alone, sharing
// alone, the full model, the reversed sharing direction, and the full model
// without context features.
inline std::vector<AblationVariant> ablation_matrix() {
    return {
        {"separate", "none", false, false, true},
        {"semantic", "none", true, false, true},
        {"textual", "none", false, true, true},
        {"part2obj", "part2obj", false, false, true},
        {"full", "part2obj", true, true, true},
        {"obj2part_full", "obj2part", true, true, true},
        {"full_no_context", "part2obj", true, true, false},
    };
}

struct AblationRow {
    std::string config;
    uint64_t seed;
    std::string level;
    double cider_r, rouge_l, meteor;
};

// Trains the segmenter once per seed, then each caption variant on top of
// it, evaluating on the test split. Emits ablation.csv under base.out_dir.
inline std::vector<AblationRow> ablate(const Corpus& corpus, const RunConfig& base,
                                       const std::vector<uint64_t>& seeds,
                                       const std::vector<AblationVariant>& variants =
                                           ablation_matrix()) {
    base.validate();
    std::filesystem::create_directories(base.out_dir);
    Tokenizer tok = Tokenizer::build(corpus);
    std::vector<AblationRow> rows;
    for (uint64_t seed : seeds) {
        RunConfig seg_cfg = base;
        seg_cfg.seed = seed;
        seg_cfg.out_dir = base.out_dir + "/seed" + std::to_string(seed) + "/seg";
        Segmenter seg(seg_cfg.segmenter_config(), seed);
        train_segmenter(corpus, seg, seg_cfg);
        seg.params().set_trainable(false);

        for (const auto& variant : variants) {
            RunConfig cfg = seg_cfg;
            cfg.out_dir = base.out_dir + "/seed" + std::to_string(seed) + "/" + variant.name;
            cfg.share_direction = variant.share_direction;
            cfg.semantic_on = variant.semantic_on;
            cfg.textual_on = variant.textual_on;
            cfg.context_features_on = variant.context_features_on;
            CaptionStack stack(cfg.captioner_config(tok.vocab_size()), cfg.num_semantic,
                               seed);
            train_captioner(corpus, seg, stack, tok, cfg);
            EvalReport rep = evaluate(corpus, Split::test, seg, stack, tok, cfg);
            write_eval_outputs(rep, cfg);
            rows.push_back({variant.name, seed, "object", rep.object_level.cider_r,
                            rep.object_level.rouge_l, rep.object_level.meteor});
            rows.push_back({variant.name, seed, "part", rep.part_level.cider_r,
                            rep.part_level.rouge_l, rep.part_level.meteor});
        }
        seg.params().set_trainable(true);
    }
    std::ofstream csv(base.out_dir + "/ablation.csv");
    csv << "config,seed,level,cider_r,rouge_l,meteor\n";
    for (const auto& r : rows)
        csv << r.config << "," << r.seed << "," << r.level << "," << r.cider_r << ","
            << r.rouge_l << "," << r.meteor << "\n";
    return rows;
}

}  // namespace mlcap

#endif
