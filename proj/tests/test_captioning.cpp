#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlcap/captioner.hpp"
#include "mlcap/corpus.hpp"
#include "mlcap/tokenizer.hpp"

#include <cstdio>
#include <filesystem>

using namespace mlcap;

namespace {

CaptionerConfig tiny_config(int vocab) {
    CaptionerConfig cfg;
    cfg.vocab_size = vocab;
    cfg.embed_dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_len = 8;
    cfg.query_dim = 16;
    cfg.feature_dim = 8;
    return cfg;
}

Var random_query(Tape&, int dim, uint64_t seed) {
    auto rng = make_rng(seed, "test-query");
    Mat q(1, dim);
    for (int i = 0; i < dim; ++i) q(0, i) = gaussian(rng, 0.0, 1.0);
    return ag::make_const(q);
}

Var random_context(int rows, int dim, uint64_t seed) {
    auto rng = make_rng(seed, "test-context");
    Mat c(rows, dim);
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < dim; ++i) c(r, i) = gaussian(rng, 0.0, 1.0);
    return ag::make_const(c);
}

}  // namespace

TEST_CASE("tokenizer: corpus vocabulary, round trip, save/load") {
    CorpusSpec spec;
    spec.num_scenes = 3;
    Corpus corpus = generate_corpus(spec);
    Tokenizer tk = Tokenizer::build(corpus);

    CHECK(Tokenizer::BOS == 0);
    CHECK(Tokenizer::EOS == 1);
    CHECK(Tokenizer::PAD == 2);
    CHECK(Tokenizer::UNK == 3);
    CHECK(tk.vocab_size() > 4);

    const std::string caption = corpus.scenes[0].objects[0].captions.object[0];
    auto ids = tk.encode(caption);
    REQUIRE(!ids.empty());
    CHECK(ids.back() == Tokenizer::EOS);
    for (size_t i = 0; i + 1 < ids.size(); ++i) CHECK(ids[i] >= 4);  // grammar is closed
    CHECK(tk.decode(ids) == caption);

    // A word outside the grammar maps to UNK.
    auto unk = tk.encode("zzzunknown", false);
    REQUIRE(unk.size() == 1);
    CHECK(unk[0] == Tokenizer::UNK);

    auto path = std::filesystem::temp_directory_path() / "mlcap_vocab_test.json";
    tk.save(path.string());
    Tokenizer loaded = Tokenizer::load(path.string());
    CHECK(loaded == tk);
    CHECK(loaded.encode(caption) == ids);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(Tokenizer::build(Corpus{}), std::invalid_argument);
}

TEST_CASE("tokenizer: ids ordered by frequency then lexicographically") {
    // Build a corpus-like frequency profile by hand through a scene whose
    // captions we control is awkward; instead verify on a real corpus that
    // frequencies are non-increasing in id, with lexicographic tie-breaks.
    CorpusSpec spec;
    spec.num_scenes = 4;
    Corpus corpus = generate_corpus(spec);
    Tokenizer tk = Tokenizer::build(corpus);

    std::map<std::string, int64_t> freq;
    for (const auto& scene : corpus.scenes)
        for (const auto& obj : scene.objects)
            for (int v = 0; v < kCaptionVariants; ++v) {
                for (const auto& w : tokenize(obj.captions.object[v])) freq[w]++;
                for (const auto& w : tokenize(obj.captions.part[v])) freq[w]++;
            }
    // Reconstruct the word at each id via decode of a single id.
    std::vector<std::string> by_id;
    for (int id = 4; id < tk.vocab_size(); ++id) by_id.push_back(tk.decode({id}));
    for (size_t i = 0; i + 1 < by_id.size(); ++i) {
        int64_t fa = freq.at(by_id[i]), fb = freq.at(by_id[i + 1]);
        CHECK(fa >= fb);
        if (fa == fb) CHECK(by_id[i] < by_id[i + 1]);
    }
}

TEST_CASE("teacher forcing: T tokens give T logits rows and T hidden rows") {
    auto cfg = tiny_config(12);
    auto rng = make_rng(7, "test-dec");
    nn::ParamStore ps;
    CaptionDecoder dec(ps, "d", cfg, rng);

    Tape t;
    Var q = random_query(t, cfg.embed_dim, 1);
    std::vector<int> tokens{5, 7, 4, Tokenizer::EOS};
    auto out = dec.forward(t, q, nullptr, nullptr, tokens);
    CHECK(out.logits->rows() == 4);
    CHECK(out.logits->cols() == cfg.vocab_size);
    CHECK(out.hidden->rows() == 4);
    CHECK(out.hidden->cols() == cfg.embed_dim);
    CHECK(out.logits->val.allFinite());
    CHECK(out.hidden->val.allFinite());

    CHECK_THROWS_AS(dec.forward(t, q, nullptr, nullptr, std::vector<int>(cfg.max_len + 1, 4)),
                    std::invalid_argument);
}

TEST_CASE("teacher forcing: causal, logits row i ignores tokens at positions >= i") {
    auto cfg = tiny_config(12);
    auto rng = make_rng(8, "test-dec");
    nn::ParamStore ps;
    CaptionDecoder dec(ps, "d", cfg, rng);

    std::vector<int> a{5, 7, 4, 6, Tokenizer::EOS};
    for (size_t j = 0; j < a.size(); ++j) {
        std::vector<int> b = a;
        b[j] = (b[j] == 9) ? 10 : 9;  // perturb one input token
        Tape ta, tb;
        Var q = random_query(ta, cfg.embed_dim, 2);
        Mat la = dec.forward(ta, q, nullptr, nullptr, a).logits->val;
        Mat lb = dec.forward(tb, q, nullptr, nullptr, b).logits->val;
        // Row i depends only on tokens[0..i-1]: rows up to and including j
        // are unchanged, and some later row must change.
        for (size_t i = 0; i <= j; ++i)
            CHECK((la.row(static_cast<Eigen::Index>(i)) - lb.row(static_cast<Eigen::Index>(i)))
                      .cwiseAbs()
                      .maxCoeff() == 0.0);
        if (j + 1 < a.size())
            CHECK((la.bottomRows(static_cast<Eigen::Index>(a.size() - j - 1)) -
                   lb.bottomRows(static_cast<Eigen::Index>(a.size() - j - 1)))
                      .cwiseAbs()
                      .maxCoeff() > 0.0);
    }
}

TEST_CASE("cross-attention: rows sum to 1, padded context columns weigh exactly 0") {
    auto cfg = tiny_config(12);
    auto rng = make_rng(9, "test-dec");
    nn::ParamStore ps;
    CaptionDecoder dec(ps, "d", cfg, rng);

    Tape t;
    Var q = random_query(t, cfg.embed_dim, 3);
    Var ctx = random_context(3, cfg.embed_dim, 4);
    auto padded = pad_context(t, ctx, 5);
    REQUIRE(padded.rows->rows() == 5);
    CHECK(padded.valid == std::vector<bool>{true, true, true, false, false});

    std::vector<int> tokens{5, 7, 4};
    dec.forward(t, q, padded.rows, &padded.valid, tokens);
    for (const auto& layer : dec.layer_stack()) {
        REQUIRE(layer.cross_attn.last_attn.size() == static_cast<size_t>(cfg.heads));
        for (const Mat& attn : layer.cross_attn.last_attn) {
            REQUIRE(attn.rows() == 4);  // query slot + 3 tokens
            REQUIRE(attn.cols() == 5);
            for (Eigen::Index r = 0; r < attn.rows(); ++r) {
                CHECK(attn.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
                CHECK(attn(r, 3) == 0.0);
                CHECK(attn(r, 4) == 0.0);
            }
        }
    }
}

TEST_CASE("pad_context: empty context comes back flagged empty") {
    Tape t;
    auto padded = pad_context(t, nullptr, 5);
    CHECK(padded.rows == nullptr);
    CHECK(padded.valid == std::vector<bool>(5, false));
    CHECK_THROWS_AS(pad_context(t, random_context(6, 8, 1), 5), std::invalid_argument);
}

TEST_CASE("decode: beam width 1 matches explicit greedy decoding") {
    auto cfg = tiny_config(15);
    auto rng = make_rng(11, "test-dec");
    nn::ParamStore ps;
    CaptionDecoder dec(ps, "d", cfg, rng);

    Tape t;
    Var q = random_query(t, cfg.embed_dim, 5);
    Var ctx = random_context(4, cfg.embed_dim, 6);
    std::vector<bool> valid(4, true);

    auto beam = dec.decode(q, ctx, &valid, 1);

    // Greedy reference: logits row T of forward([tokens, sentinel]) depends
    // only on the prefix, so it is the next-token distribution.
    std::vector<int> greedy;
    for (int step = 0; step < cfg.max_len; ++step) {
        std::vector<int> probe = greedy;
        probe.push_back(Tokenizer::UNK);  // value at this slot cannot matter
        Tape tf;
        Mat logits = dec.forward(tf, q, ctx, &valid, probe).logits->val;
        Eigen::RowVectorXd row = logits.row(logits.rows() - 1);
        row(Tokenizer::BOS) = -std::numeric_limits<double>::infinity();
        row(Tokenizer::PAD) = -std::numeric_limits<double>::infinity();
        int best = 0;
        for (int v = 1; v < cfg.vocab_size; ++v)
            if (row(v) > row(best)) best = v;
        greedy.push_back(best);
        if (best == Tokenizer::EOS) break;
    }
    CHECK(beam.tokens == greedy);
    CHECK(beam.score == doctest::Approx(beam.logprob / static_cast<double>(beam.tokens.size())));
}

TEST_CASE("decode: winner hidden states match a teacher-forced pass bit for bit") {
    auto cfg = tiny_config(15);
    auto rng = make_rng(12, "test-dec");
    nn::ParamStore ps;
    CaptionDecoder dec(ps, "d", cfg, rng);

    Tape t;
    Var q = random_query(t, cfg.embed_dim, 7);
    Var ctx = random_context(3, cfg.embed_dim, 8);
    std::vector<bool> valid(3, true);

    for (int beams : {1, 3, 5}) {
        auto hyp = dec.decode(q, ctx, &valid, beams);
        REQUIRE(!hyp.tokens.empty());
        CHECK(hyp.tokens.size() <= static_cast<size_t>(cfg.max_len));
        Tape tf;
        Mat ref = dec.forward(tf, q, ctx, &valid, hyp.tokens).hidden->val;
        CHECK((ref - hyp.hidden).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK_THROWS_AS(dec.decode(q, ctx, &valid, 0), std::invalid_argument);
}

TEST_CASE("decode: wider beams never score worse") {
    auto cfg = tiny_config(15);
    auto rng = make_rng(13, "test-dec");
    nn::ParamStore ps;
    CaptionDecoder dec(ps, "d", cfg, rng);

    Tape t;
    Var q = random_query(t, cfg.embed_dim, 9);
    double prev = -std::numeric_limits<double>::infinity();
    for (int beams : {1, 2, 5}) {
        auto hyp = dec.decode(q, nullptr, nullptr, beams);
        CHECK(hyp.score >= prev - 1e-12);
        prev = hyp.score;
    }
}

TEST_CASE("caption loss: ln V on uniform logits, zero for missing levels, additive") {
    const int V = 10;
    Tape t;
    Var uniform = ag::make_const(Mat::Zero(3, V));
    std::vector<int> targets{4, 5, 6};
    Var l = caption_level_loss(t, uniform, targets);
    CHECK(l->val(0, 0) == doctest::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));

    // PAD positions are excluded from the mean.
    std::vector<int> padded{4, Tokenizer::PAD, 6};
    Var lp = caption_level_loss(t, uniform, padded);
    CHECK(lp->val(0, 0) == doctest::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));

    CHECK(caption_level_loss(t, nullptr, targets)->val(0, 0) == 0.0);
    CHECK(caption_level_loss(t, uniform, {})->val(0, 0) == 0.0);

    auto rng = make_rng(21, "test-loss");
    Mat raw(3, V);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < V; ++c) raw(r, c) = gaussian(rng, 0.0, 1.0);
    Var other = ag::make_const(raw);
    double a = caption_level_loss(t, uniform, targets)->val(0, 0);
    double b = caption_level_loss(t, other, targets)->val(0, 0);
    double total = caption_loss(t, uniform, targets, other, targets)->val(0, 0);
    CHECK(total == doctest::Approx(a + b).epsilon(1e-12));
    // An object with no part caption contributes only its object level.
    CHECK(caption_loss(t, uniform, targets, nullptr, {})->val(0, 0) ==
          doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("segment context: per-segment means over the mask, ascending id order") {
    Mat feats(6, 2);
    feats << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    SegmentTable table;
    table.segment_id = {0, 0, 1, 1, 2, 2};
    table.num_segments = 3;

    std::vector<uint8_t> mask{1, 1, 1, 0, 0, 0};
    Mat ctx = segment_context_rows(feats, table, mask);
    REQUIRE(ctx.rows() == 2);
    CHECK(ctx(0, 0) == doctest::Approx(2.0));  // mean of rows 0,1
    CHECK(ctx(0, 1) == doctest::Approx(3.0));
    CHECK(ctx(1, 0) == doctest::Approx(5.0));  // row 2 alone
    CHECK(ctx(1, 1) == doctest::Approx(6.0));

    // Segment order follows segment id, not mask order.
    std::vector<uint8_t> rev{0, 0, 0, 1, 0, 1};
    Mat ctx2 = segment_context_rows(feats, table, rev);
    REQUIRE(ctx2.rows() == 2);
    CHECK(ctx2(0, 0) == doctest::Approx(7.0));
    CHECK(ctx2(1, 0) == doctest::Approx(11.0));

    CHECK(segment_context_rows(feats, table, std::vector<uint8_t>(6, 0)).rows() == 0);
    CHECK_THROWS_AS(segment_context_rows(feats, table, std::vector<uint8_t>(5, 1)),
                    std::invalid_argument);
}

TEST_CASE("captioner aggregate: query projection, contexts, hidden sharing") {
    auto cfg = tiny_config(12);
    cfg.query_dim = 10;
    cfg.feature_dim = 6;
    Captioner cap(cfg, 31);

    Tape t;
    Var rq = random_query(t, cfg.query_dim, 13);
    Var qc = cap.object_query(t, rq);
    CHECK(qc->rows() == 1);
    CHECK(qc->cols() == cfg.embed_dim);

    Mat raw_ctx(3, cfg.feature_dim);
    auto rng = make_rng(14, "test-ctx");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < cfg.feature_dim; ++c) raw_ctx(r, c) = gaussian(rng, 0.0, 1.0);
    Var so = cap.object_context(t, raw_ctx);
    Var sp = cap.part_context(t, raw_ctx);
    REQUIRE(so);
    REQUIRE(sp);
    CHECK(so->cols() == cfg.embed_dim);
    CHECK(sp->cols() == cfg.embed_dim);
    // The two levels use distinct projections.
    CHECK((so->val - sp->val).cwiseAbs().maxCoeff() > 0.0);
    CHECK(cap.object_context(t, Mat(0, cfg.feature_dim)) == nullptr);

    // Part-level hidden states prepend to the object context.
    auto padded = pad_context(t, so, 5);
    Var donor = random_context(4, cfg.embed_dim, 15);
    auto shared = cap.share_hidden(t, donor, padded);
    CHECK(shared.rows->rows() == 9);
    std::vector<bool> expect(9, true);
    expect[7] = expect[8] = false;
    CHECK(shared.valid == expect);

    // Both decoders accept the shared context.
    auto out = cap.object_decoder().forward(t, qc, shared.rows, &shared.valid, {5, 6});
    CHECK(out.logits->rows() == 2);
}

TEST_CASE("caption pipeline gradients agree with finite differences") {
    auto cfg = tiny_config(9);
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.max_len = 5;
    cfg.query_dim = 6;
    cfg.feature_dim = 4;
    Captioner cap(cfg, 41);

    Mat raw_ctx(2, cfg.feature_dim);
    auto rng = make_rng(16, "test-fd");
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < cfg.feature_dim; ++c) raw_ctx(r, c) = gaussian(rng, 0.0, 1.0);
    Mat rq(1, cfg.query_dim);
    for (int c = 0; c < cfg.query_dim; ++c) rq(0, c) = gaussian(rng, 0.0, 1.0);
    std::vector<int> targets{5, 7, Tokenizer::EOS};

    auto eval = [&]() {
        Tape t;
        Var qc = cap.object_query(t, ag::make_const(rq));
        Var ctx = cap.object_context(t, raw_ctx);
        auto padded = pad_context(t, ctx, 3);
        auto out = cap.object_decoder().forward(t, qc, padded.rows, &padded.valid, targets);
        Var loss = caption_level_loss(t, out.logits, targets);
        return std::pair{loss, std::move(t)};
    };

    auto [loss, tape] = eval();
    cap.params().zero_grad();
    tape.backward(loss);

    const double h = 1e-5;
    for (const std::string& name :
         {std::string("cap.obj_query.W"), std::string("cap.obj_ctx.W"),
          std::string("cap.obj.tok_emb"), std::string("cap.obj.layer0.cross.q.W"),
          std::string("cap.obj.head.b")}) {
        Var p = cap.params().at(name);
        auto check_entry = [&](Eigen::Index r, Eigen::Index c) {
            double saved = p->val(r, c);
            p->val(r, c) = saved + h;
            double fp = eval().first->val(0, 0);
            p->val(r, c) = saved - h;
            double fm = eval().first->val(0, 0);
            p->val(r, c) = saved;
            double fd = (fp - fm) / (2 * h);
            double g = p->grad(r, c);
            CHECK(std::abs(fd - g) <= 1e-6 + 1e-4 * std::max(std::abs(fd), std::abs(g)));
        };
        check_entry(0, 0);
        check_entry(p->rows() - 1, p->cols() - 1);
    }
}
