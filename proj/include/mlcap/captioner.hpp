#ifndef MLCAP_CAPTIONER_HPP
#define MLCAP_CAPTIONER_HPP

#include "mlcap/nn.hpp"
#include "mlcap/tokenizer.hpp"
#include "mlcap/voxel.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace mlcap {

using ag::Mat;
using ag::Tape;
using ag::Var;

struct CaptionerConfig {
    int vocab_size = 0;
    int embed_dim = 128;
    int layers = 1;
    int heads = 4;
    int max_len = 48;     // generated tokens per caption, query slot excluded
    int query_dim = 128;  // refined segmenter query width
    int feature_dim = 128;
    int beams = 5;

    void validate() const {
        if (vocab_size <= Tokenizer::UNK) throw std::invalid_argument("captioner: vocab too small");
        if (embed_dim <= 0 || layers <= 0 || heads <= 0 || max_len <= 0)
            throw std::invalid_argument("captioner: bad dimensions");
        if (embed_dim % heads != 0) throw std::invalid_argument("captioner: dim % heads");
    }
};

enum class ShareDirection { none, part_to_object, object_to_part };

inline ShareDirection share_direction_from_string(const std::string& s) {
    if (s == "none") return ShareDirection::none;
    if (s == "part2obj") return ShareDirection::part_to_object;
    if (s == "obj2part") return ShareDirection::object_to_part;
    throw std::invalid_argument("unknown share direction: " + s);
}

struct TeacherForced {
    Var logits;  // T x V, row i predicts tokens[i]
    Var hidden;  // T x D, post-norm state after consuming tokens[i]
};

struct BeamHypothesis {
    std::vector<int> tokens;  // includes the closing EOS when one was produced
    double logprob = 0.0;     // sum of selected token log-probabilities
    double score = 0.0;       // logprob / length
    Mat hidden;               // T x D, from re-running the winner teacher-forced
};

// Autoregressive decoder over word tokens. The projected instance query is
// the initial sequence element; segment features enter via cross-attention.
class CaptionDecoder {
public:
    CaptionDecoder() = default;
    CaptionDecoder(nn::ParamStore& ps, const std::string& prefix, const CaptionerConfig& cfg,
                   std::mt19937_64& rng)
        : cfg_(cfg) {
        cfg.validate();
        tok_emb_ = ps.create(prefix + ".tok_emb", cfg.vocab_size, cfg.embed_dim, rng, 0.02);
        pos_emb_ = ps.create(prefix + ".pos_emb", cfg.max_len + 1, cfg.embed_dim, rng, 0.02);
        for (int i = 0; i < cfg.layers; ++i)
            layers_.emplace_back(ps, prefix + ".layer" + std::to_string(i), cfg.embed_dim,
                                 cfg.heads, rng);
        ln_f_ = nn::LayerNorm(ps, prefix + ".ln_f", cfg.embed_dim);
        head_ = nn::Linear(ps, prefix + ".head", cfg.embed_dim, cfg.vocab_size, rng);
    }

    // Runs [query; emb(tokens)] through the decoder. For T input tokens the
    // result has T logits rows and T hidden rows; `context` may be null or
    // empty, in which case cross-attention is skipped.
    TeacherForced forward(Tape& t, const Var& query, const Var& context,
                          const std::vector<bool>* ctx_valid,
                          const std::vector<int>& tokens) const {
        Var hn = trunk(t, query, context, ctx_valid, tokens);
        const auto T = static_cast<Eigen::Index>(tokens.size());
        TeacherForced out;
        out.logits = head_(t, ag::slice_rows(t, hn, 0, T));
        out.hidden = ag::slice_rows(t, hn, 1, T);
        return out;
    }

    // Length-normalized beam search (normalization exponent 1). Ties prefer
    // the hypothesis that finished first. The winner's hidden states are
    // recomputed teacher-forced on its own tokens, so they are bit-identical
    // to what a training pass over that sequence would produce.
    BeamHypothesis decode(const Var& query, const Var& context,
                          const std::vector<bool>* ctx_valid, int beams) const {
        if (beams <= 0) throw std::invalid_argument("decode: beams must be positive");
        struct Hyp {
            std::vector<int> tokens;
            double logprob = 0.0;
        };
        std::vector<Hyp> alive{Hyp{}};
        std::vector<Hyp> finished;
        for (int step = 0; step < cfg_.max_len && !alive.empty(); ++step) {
            struct Cand {
                size_t beam;
                int token;
                double logprob;
            };
            std::vector<Cand> cands;
            for (size_t b = 0; b < alive.size(); ++b) {
                Eigen::RowVectorXd lp = next_logprobs(query, context, ctx_valid, alive[b].tokens);
                std::vector<int> order(static_cast<size_t>(lp.size()));
                std::iota(order.begin(), order.end(), 0);
                std::partial_sort(order.begin(),
                                  order.begin() + std::min<size_t>(order.size(),
                                                                   static_cast<size_t>(beams)),
                                  order.end(),
                                  [&](int x, int y) {
                                      if (lp(x) != lp(y)) return lp(x) > lp(y);
                                      return x < y;
                                  });
                for (int k = 0; k < beams && k < static_cast<int>(order.size()); ++k)
                    cands.push_back({b, order[static_cast<size_t>(k)],
                                     alive[b].logprob + lp(order[static_cast<size_t>(k)])});
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
                return a.logprob > b.logprob;
            });
            std::vector<Hyp> next;
            for (const Cand& c : cands) {
                if (static_cast<int>(next.size() + finished.size()) >= beams) break;
                Hyp h = alive[c.beam];
                h.tokens.push_back(c.token);
                h.logprob = c.logprob;
                if (c.token == Tokenizer::EOS)
                    finished.push_back(std::move(h));
                else
                    next.push_back(std::move(h));
            }
            alive = std::move(next);
        }
        // Beams still open at the length limit compete as-is.
        for (auto& h : alive) finished.push_back(std::move(h));
        if (finished.empty()) throw std::logic_error("decode: no hypothesis");
        size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < finished.size(); ++i) {
            double score = finished[i].logprob / std::max<size_t>(1, finished[i].tokens.size());
            if (score > best_score) {
                best_score = score;
                best = i;
            }
        }
        BeamHypothesis out;
        out.tokens = finished[best].tokens;
        out.logprob = finished[best].logprob;
        out.score = best_score;
        Tape t;
        out.hidden = forward(t, query, context, ctx_valid, out.tokens).hidden->val;
        return out;
    }

    const CaptionerConfig& config() const { return cfg_; }

    // For attention-weight inspection (tests, diagnostics).
    const std::vector<nn::DecoderLayer>& layer_stack() const { return layers_; }

private:
    // Full T+1 row post-norm trunk output.
    Var trunk(Tape& t, const Var& query, const Var& context, const std::vector<bool>* ctx_valid,
              const std::vector<int>& tokens) const {
        if (static_cast<int>(tokens.size()) > cfg_.max_len)
            throw std::invalid_argument("captioner: sequence exceeds max_len");
        if (query->rows() != 1 || query->cols() != cfg_.embed_dim)
            throw std::invalid_argument("captioner: query must be 1 x embed_dim");
        Var x = query;
        if (!tokens.empty()) x = ag::concat_rows(t, x, ag::embedding_rows(t, tok_emb_, tokens));
        std::vector<int> pos(tokens.size() + 1);
        std::iota(pos.begin(), pos.end(), 0);
        x = ag::add(t, x, ag::embedding_rows(t, pos_emb_, pos));
        const auto n = static_cast<Eigen::Index>(pos.size());
        Mat self_mask = nn::causal_mask(n);
        Mat ctx_mask;
        const Mat* cm = nullptr;
        if (context && context->rows() > 0 && ctx_valid) {
            if (static_cast<Eigen::Index>(ctx_valid->size()) != context->rows())
                throw std::invalid_argument("captioner: context mask length");
            ctx_mask = nn::key_padding_mask(n, *ctx_valid);
            cm = &ctx_mask;
        }
        Var h = x;
        for (const auto& layer : layers_) h = layer(t, h, context, self_mask, cm);
        return ln_f_(t, h);
    }

    // Log-probabilities of the next token after `tokens`. BOS and PAD are
    // never emitted.
    Eigen::RowVectorXd next_logprobs(const Var& query, const Var& context,
                                     const std::vector<bool>* ctx_valid,
                                     const std::vector<int>& tokens) const {
        Tape t;
        Var hn = trunk(t, query, context, ctx_valid, tokens);
        Var row = head_(t, ag::slice_rows(t, hn, hn->rows() - 1, 1));
        Eigen::RowVectorXd logits = row->val.row(0);
        logits(Tokenizer::BOS) = -std::numeric_limits<double>::infinity();
        logits(Tokenizer::PAD) = -std::numeric_limits<double>::infinity();
        double mx = logits.maxCoeff();
        double lse = mx + std::log((logits.array() - mx).exp().sum());
        return logits.array() - lse;
    }

    CaptionerConfig cfg_;
    Var tok_emb_, pos_emb_;
    std::vector<nn::DecoderLayer> layers_;
    nn::LayerNorm ln_f_;
    nn::Linear head_;
};

// ------------------------------------------------------- context assembly

// Mean voxel feature of every oversegment intersecting the instance mask, in
// ascending segment id order. 0 rows when nothing intersects.
inline Mat segment_context_rows(const Mat& features, const SegmentTable& segments,
                                const std::vector<uint8_t>& mask) {
    if (static_cast<size_t>(features.rows()) != mask.size() ||
        segments.segment_id.size() != mask.size())
        throw std::invalid_argument("segment_context_rows: length mismatch");
    std::vector<Mat> sums(static_cast<size_t>(segments.num_segments));
    std::vector<int> counts(static_cast<size_t>(segments.num_segments), 0);
    for (size_t v = 0; v < mask.size(); ++v) {
        if (!mask[v]) continue;
        auto s = static_cast<size_t>(segments.segment_id[v]);
        if (counts[s] == 0) sums[s] = Mat::Zero(1, features.cols());
        sums[s] += features.row(static_cast<Eigen::Index>(v));
        counts[s]++;
    }
    Eigen::Index n = 0;
    for (int c : counts) n += (c > 0);
    Mat out(n, features.cols());
    Eigen::Index r = 0;
    for (size_t s = 0; s < sums.size(); ++s)
        if (counts[s] > 0) out.row(r++) = sums[s] / static_cast<double>(counts[s]);
    return out;
}

struct PaddedContext {
    Var rows;                 // target_rows x D (null when target_rows == 0)
    std::vector<bool> valid;  // false on zero-padded rows
};

// Zero-pads a context up to target_rows and records which rows are real.
// Padded rows are masked to exactly zero attention weight downstream.
inline PaddedContext pad_context(Tape& t, const Var& context, Eigen::Index target_rows) {
    Eigen::Index real = context ? context->rows() : 0;
    if (real > target_rows) throw std::invalid_argument("pad_context: context larger than target");
    PaddedContext out;
    out.valid.assign(static_cast<size_t>(target_rows), false);
    std::fill(out.valid.begin(), out.valid.begin() + real, true);
    if (real == 0) {
        // Nothing real to attend over; flagged as empty so that the decoder
        // skips cross-attention instead of attending to all-padding rows.
        out.rows = nullptr;
        return out;
    }
    out.rows = context;
    if (real < target_rows) {
        Var zeros = ag::make_const(Mat::Zero(target_rows - real, context->cols()));
        out.rows = ag::concat_rows(t, out.rows, zeros);
    }
    return out;
}

// --------------------------------------------------------------- aggregate

// Both caption levels plus the projections gluing them to the segmenter:
// query projection into token space, per-level segment-context projections,
// and the hidden-state projection used when one level feeds the other.
class Captioner {
public:
    Captioner(const CaptionerConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        auto rng = make_rng(seed, "captioner-init");
        obj_query_proj_ =
            nn::Linear(params_, "cap.obj_query", cfg.query_dim, cfg.embed_dim, rng);
        part_query_proj_ =
            nn::Linear(params_, "cap.part_query", cfg.query_dim, cfg.embed_dim, rng);
        // Starts near zero so the receiving decoder initially attends past the
        // donated rows; joint training with a full-scale map destabilizes the
        // donor's free-running decoding long before it helps the receiver.
        hidden_proj_ =
            nn::Linear(params_, "cap.hidden_proj", cfg.embed_dim, cfg.embed_dim, rng, 0.1);
        obj_ctx_proj_ = nn::Linear(params_, "cap.obj_ctx", cfg.feature_dim, cfg.embed_dim, rng);
        part_ctx_proj_ = nn::Linear(params_, "cap.part_ctx", cfg.feature_dim, cfg.embed_dim, rng);
        obj_dec_ = CaptionDecoder(params_, "cap.obj", cfg, rng);
        part_dec_ = CaptionDecoder(params_, "cap.part", cfg, rng);
    }

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const CaptionerConfig& config() const { return cfg_; }
    const CaptionDecoder& object_decoder() const { return obj_dec_; }
    const CaptionDecoder& part_decoder() const { return part_dec_; }

    // Each level has its own caption-aware query map so that with sharing and
    // consistency disabled the two decoders' graphs stay fully disjoint.
    Var object_query(Tape& t, const Var& refined_query) const {
        return obj_query_proj_(t, refined_query);
    }
    Var part_query(Tape& t, const Var& refined_query) const {
        return part_query_proj_(t, refined_query);
    }

    // Raw segment context rows projected into the caption embedding space.
    Var object_context(Tape& t, const Mat& ctx_rows) const {
        return project_context(t, obj_ctx_proj_, ctx_rows);
    }
    Var part_context(Tape& t, const Mat& ctx_rows) const {
        return project_context(t, part_ctx_proj_, ctx_rows);
    }

    // Prepends the projected hidden states of the other caption level to a
    // context, extending the validity mask accordingly.
    // The donated states are treated as constants: the receiving level reads
    // them but its loss does not reach back into the donor decoder, whose
    // free-running decoding otherwise degrades under the extra gradient.
    PaddedContext share_hidden(Tape& t, const Var& donor_hidden,
                               const PaddedContext& ctx) const {
        Var proj = hidden_proj_(t, ag::make_const(donor_hidden->val));
        PaddedContext out;
        out.valid.assign(static_cast<size_t>(proj->rows()), true);
        out.rows = proj;
        if (ctx.rows && ctx.rows->cols() == proj->cols() && ctx.rows->rows() > 0) {
            out.rows = ag::concat_rows(t, proj, ctx.rows);
            out.valid.insert(out.valid.end(), ctx.valid.begin(), ctx.valid.end());
        }
        return out;
    }

private:
    static Var project_context(Tape& t, const nn::Linear& proj, const Mat& ctx_rows) {
        if (ctx_rows.rows() == 0) return nullptr;
        return proj(t, ag::make_const(ctx_rows));
    }

    CaptionerConfig cfg_;
    nn::ParamStore params_;
    nn::Linear obj_query_proj_, part_query_proj_, hidden_proj_, obj_ctx_proj_, part_ctx_proj_;
    CaptionDecoder obj_dec_, part_dec_;
};

// Mean cross-entropy over the non-PAD positions of one caption; a null
// logits Var (uncaptioned level) contributes exactly zero.
inline Var caption_level_loss(Tape& t, const Var& logits, const std::vector<int>& targets) {
    if (!logits || targets.empty()) return ag::make_const(Mat::Zero(1, 1));
    return ag::cross_entropy_rows(t, logits, targets, Tokenizer::PAD);
}

// Total caption loss: per-level mean CE summed over levels.
inline Var caption_loss(Tape& t, const Var& obj_logits, const std::vector<int>& obj_targets,
                        const Var& part_logits, const std::vector<int>& part_targets) {
    return ag::add(t, caption_level_loss(t, obj_logits, obj_targets),
                   caption_level_loss(t, part_logits, part_targets));
}

}  // namespace mlcap

#endif
