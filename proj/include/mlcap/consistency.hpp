#ifndef MLCAP_CONSISTENCY_HPP
#define MLCAP_CONSISTENCY_HPP

#include "mlcap/nn.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mlcap {

using ag::Mat;
using ag::Tape;
using ag::Var;

// Small transformer encoder that pools a sequence of decoder hidden states
// into a single vector. Used by both consistency heads.
struct ProjectorConfig {
    int in_dim = 128;
    int embed_dim = 16;
    int layers = 2;
    int heads = 2;
    int ff_dim = 128;
    int out_dim = 128;
    bool positional = false;  // fixed sinusoidal positions, off by default
    int max_len = 64;

    void validate() const {
        if (in_dim <= 0 || embed_dim <= 0 || layers <= 0 || heads <= 0 || ff_dim <= 0 ||
            out_dim <= 0 || max_len <= 0)
            throw std::invalid_argument("projector: bad dimensions");
        if (embed_dim % heads != 0) throw std::invalid_argument("projector: dim % heads");
    }
};

inline Mat sinusoidal_positions(Eigen::Index rows, Eigen::Index dim) {
    Mat p(rows, dim);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < dim; ++c) {
            double rate = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) /
                                                 static_cast<double>(dim));
            p(r, c) = (c % 2 == 0) ? std::sin(r * rate) : std::cos(r * rate);
        }
    return p;
}

class Projector {
public:
    Projector() = default;
    Projector(nn::ParamStore& ps, const std::string& prefix, const ProjectorConfig& cfg,
              std::mt19937_64& rng)
        : cfg_(cfg) {
        cfg.validate();
        in_ = nn::Linear(ps, prefix + ".in", cfg.in_dim, cfg.embed_dim, rng);
        for (int i = 0; i < cfg.layers; ++i)
            layers_.emplace_back(ps, prefix + ".layer" + std::to_string(i), cfg.embed_dim,
                                 cfg.heads, cfg.ff_dim, rng);
        out_ = nn::Linear(ps, prefix + ".out", cfg.embed_dim, cfg.out_dim, rng);
    }

    // hidden: T x in_dim -> pooled 1 x out_dim
    Var operator()(Tape& t, const Var& hidden) const {
        if (hidden->rows() == 0) throw std::invalid_argument("projector: empty sequence");
        if (hidden->cols() != cfg_.in_dim) throw std::invalid_argument("projector: width");
        if (hidden->rows() > cfg_.max_len) throw std::invalid_argument("projector: too long");
        Var x = in_(t, hidden);
        if (cfg_.positional)
            x = ag::add(t, x, ag::make_const(sinusoidal_positions(x->rows(), x->cols())));
        for (const auto& layer : layers_) x = layer(t, x);
        return ag::mean_rows(t, out_(t, x));
    }

    const ProjectorConfig& config() const { return cfg_; }

private:
    ProjectorConfig cfg_;
    nn::Linear in_, out_;
    std::vector<nn::EncoderLayer> layers_;
};

// ------------------------------------------------------------ semantic term

// Pooled hidden states classified into a shared latent semantic space.
class SemanticHead {
public:
    SemanticHead() = default;
    SemanticHead(nn::ParamStore& ps, const std::string& prefix, const ProjectorConfig& cfg,
                 int num_semantic, std::mt19937_64& rng)
        : proj_(ps, prefix, cfg, rng) {
        if (num_semantic <= 1) throw std::invalid_argument("semantic head: class count");
        head_ = nn::Linear(ps, prefix + ".cls", cfg.out_dim, num_semantic, rng);
    }

    Var operator()(Tape& t, const Var& hidden) const { return head_(t, proj_(t, hidden)); }

private:
    Projector proj_;
    nn::Linear head_;
};

namespace detail {
inline Mat softmax_row_value(const Mat& logits) {
    Mat p(1, logits.cols());
    double mx = logits.row(0).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        p(0, c) = std::exp(logits(0, c) - mx);
        z += p(0, c);
    }
    p /= z;
    return p;
}
}  // namespace detail

// Symmetric cross-entropy between the two levels' semantic distributions.
// Each direction stops the gradient of its target: the object term matches
// p_obj against a frozen softmax of the part logits, and vice versa, so each
// level is pulled toward the other without collapsing through both paths.
inline Var semantic_consistency_loss(Tape& t, const Var& sem_obj, const Var& sem_part) {
    Mat q_part = detail::softmax_row_value(sem_part->val);  // stop-gradient target
    Mat q_obj = detail::softmax_row_value(sem_obj->val);
    return ag::add(t, ag::soft_cross_entropy(t, sem_obj, q_part),
                   ag::soft_cross_entropy(t, sem_part, q_obj));
}

// ------------------------------------------------------------- textual term

enum class TextualDistance { cosine, squared_l2 };

inline TextualDistance textual_distance_from_string(const std::string& s) {
    if (s == "cosine") return TextualDistance::cosine;
    if (s == "l2") return TextualDistance::squared_l2;
    throw std::invalid_argument("unknown textual distance: " + s);
}

// Distance between pooled textual embeddings of the two caption levels.
inline Var textual_consistency_loss(Tape& t, const Var& emb_obj, const Var& emb_part,
                                    TextualDistance kind = TextualDistance::cosine) {
    if (kind == TextualDistance::cosine) return ag::cosine_distance(t, emb_obj, emb_part);
    return ag::squared_l2(t, emb_obj, emb_part);
}

// ------------------------------------------------------------- combination

struct LossWeights {
    double caption = 1.0;
    double semantic = 0.1;
    double textual = 0.1;
};

struct LossBreakdown {
    Var caption, semantic, textual, total;

    double caption_value() const { return caption->val(0, 0); }
    double semantic_value() const { return semantic->val(0, 0); }
    double textual_value() const { return textual->val(0, 0); }
    double total_value() const { return total->val(0, 0); }
};

// total = w_c * L_caption + w_s * L_semantic + w_t * L_textual. A non-finite
// total aborts the step rather than poisoning the parameters.
inline LossBreakdown total_loss(Tape& t, const Var& caption, const Var& semantic,
                                const Var& textual, const LossWeights& w = {}) {
    LossBreakdown out;
    out.caption = caption;
    out.semantic = semantic;
    out.textual = textual;
    out.total = ag::weighted_sum(t, {caption, semantic, textual},
                                 {w.caption, w.semantic, w.textual});
    if (!std::isfinite(out.total_value()))
        throw std::runtime_error("total_loss: non-finite loss");
    return out;
}

}  // namespace mlcap

#endif
