#ifndef MLCAP_NN_HPP
#define MLCAP_NN_HPP

#include "mlcap/rng.hpp"
#include "mlcap/tensor.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mlcap::nn {

using ag::Mat;
using ag::Tape;
using ag::Var;

// Named parameter registry. Layers register their tensors here so the
// optimizer, checkpoints and gradient checks can enumerate them.
class ParamStore {
public:
    Var create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
               std::mt19937_64& rng, double init_std) {
        Mat m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = gaussian(rng, 0.0, init_std);
        return insert(name, std::move(m));
    }

    Var create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        return insert(name, Mat::Zero(rows, cols));
    }

    Var create_ones(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        return insert(name, Mat::Ones(rows, cols));
    }

    Var insert(const std::string& name, Mat m) {
        return attach(name, ag::make_param(std::move(m)));
    }

    // Registers an existing tensor under this store (shared ownership), so
    // several sub-models can be optimized and checkpointed as one unit.
    Var attach(const std::string& name, const Var& v) {
        if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        params_[name] = v;
        order_.push_back(name);
        return v;
    }

    Var at(const std::string& name) const { return params_.at(name); }
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }

    void zero_grad() {
        for (auto& [k, v] : params_) v->zero_grad();
    }

    double grad_norm() const {
        double s = 0.0;
        for (auto& [k, v] : params_) s += v->grad.squaredNorm();
        return std::sqrt(s);
    }

    void set_trainable(bool on) {
        for (auto& [k, v] : params_) v->requires_grad = on;
    }

private:
    std::map<std::string, Var> params_;
    std::vector<std::string> order_;  // creation order, stable for checkpoints
};

// ------------------------------------------------------------------- layers

struct Linear {
    Var W, b;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
           std::mt19937_64& rng, double init_scale = 1.0) {
        double std = init_scale / std::sqrt(static_cast<double>(in));
        W = ps.create(prefix + ".W", in, out, rng, std);
        b = ps.create_zeros(prefix + ".b", 1, out);
    }

    Var operator()(Tape& t, const Var& x) const {
        return ag::add_rowvec(t, ag::matmul(t, x, W), b);
    }
};

struct LayerNorm {
    Var gain, bias;

    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, Eigen::Index dim) {
        gain = ps.create_ones(prefix + ".g", 1, dim);
        bias = ps.create_zeros(prefix + ".b", 1, dim);
    }

    Var operator()(Tape& t, const Var& x) const { return ag::layernorm_rows(t, x, gain, bias); }
};

// Additive attention masks: 0 where allowed, -inf where forbidden, so that
// forbidden positions get exactly zero weight after softmax.
inline Mat causal_mask(Eigen::Index n) {
    Mat m = Mat::Zero(n, n);
    const double ninf = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = r + 1; c < n; ++c) m(r, c) = ninf;
    return m;
}

inline Mat key_padding_mask(Eigen::Index q_rows, const std::vector<bool>& key_valid) {
    Mat m = Mat::Zero(q_rows, static_cast<Eigen::Index>(key_valid.size()));
    const double ninf = -std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < key_valid.size(); ++c)
        if (!key_valid[c]) m.col(static_cast<Eigen::Index>(c)).setConstant(ninf);
    return m;
}

struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;
    Eigen::Index dim = 0;
    // softmax weights of the most recent forward, one matrix per head
    mutable std::vector<Mat> last_attn;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, Eigen::Index d, int h,
                       std::mt19937_64& rng)
        : heads(h), dim(d) {
        if (d % h != 0) throw std::invalid_argument("attention dim not divisible by heads");
        wq = Linear(ps, prefix + ".q", d, d, rng);
        wk = Linear(ps, prefix + ".k", d, d, rng);
        wv = Linear(ps, prefix + ".v", d, d, rng);
        wo = Linear(ps, prefix + ".o", d, d, rng);
    }

    // query: TqxD, kv: TkxD (keys and values both come from kv)
    Var operator()(Tape& t, const Var& query, const Var& kv, const Mat* add_mask = nullptr) const {
        Var q = wq(t, query), k = wk(t, kv), v = wv(t, kv);
        Eigen::Index dh = dim / heads;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        last_attn.clear();
        std::vector<Var> outs;
        outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            Var qh = ag::slice_cols(t, q, h * dh, dh);
            Var kh = ag::slice_cols(t, k, h * dh, dh);
            Var vh = ag::slice_cols(t, v, h * dh, dh);
            Var scores = ag::scale(t, ag::matmul_nt(t, qh, kh), inv_sqrt);
            Var attn = ag::softmax_rows(t, scores, add_mask);
            last_attn.push_back(attn->val);
            outs.push_back(ag::matmul(t, attn, vh));
        }
        return wo(t, ag::concat_cols(t, outs));
    }
};

struct FeedForward {
    Linear fc1, fc2;

    FeedForward() = default;
    FeedForward(ParamStore& ps, const std::string& prefix, Eigen::Index d, Eigen::Index hidden,
                std::mt19937_64& rng) {
        fc1 = Linear(ps, prefix + ".fc1", d, hidden, rng);
        fc2 = Linear(ps, prefix + ".fc2", hidden, d, rng);
    }

    Var operator()(Tape& t, const Var& x) const { return fc2(t, ag::gelu(t, fc1(t, x))); }
};

// Pre-LN transformer decoder layer: causal self-attention, optional
// cross-attention over an external context, feed-forward.
struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ff;

    DecoderLayer() = default;
    DecoderLayer(ParamStore& ps, const std::string& prefix, Eigen::Index d, int heads,
                 std::mt19937_64& rng) {
        ln1 = LayerNorm(ps, prefix + ".ln1", d);
        ln2 = LayerNorm(ps, prefix + ".ln2", d);
        ln3 = LayerNorm(ps, prefix + ".ln3", d);
        self_attn = MultiHeadAttention(ps, prefix + ".self", d, heads, rng);
        cross_attn = MultiHeadAttention(ps, prefix + ".cross", d, heads, rng);
        ff = FeedForward(ps, prefix + ".ff", d, 4 * d, rng);
    }

    // context == nullptr (or 0 rows) skips the cross-attention sublayer.
    Var operator()(Tape& t, const Var& x, const Var& context, const Mat& self_mask,
                   const Mat* ctx_mask) const {
        Var h = ag::add(t, x, self_attn(t, ln1(t, x), ln1(t, x), &self_mask));
        if (context && context->rows() > 0)
            h = ag::add(t, h, cross_attn(t, ln2(t, h), context, ctx_mask));
        return ag::add(t, h, ff(t, ln3(t, h)));
    }
};

// Pre-LN transformer encoder layer (no mask), used by the consistency
// projectors.
struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ff;

    EncoderLayer() = default;
    EncoderLayer(ParamStore& ps, const std::string& prefix, Eigen::Index d, int heads,
                 Eigen::Index ff_dim, std::mt19937_64& rng) {
        ln1 = LayerNorm(ps, prefix + ".ln1", d);
        ln2 = LayerNorm(ps, prefix + ".ln2", d);
        attn = MultiHeadAttention(ps, prefix + ".attn", d, heads, rng);
        ff = FeedForward(ps, prefix + ".ff", d, ff_dim, rng);
    }

    Var operator()(Tape& t, const Var& x) const {
        Var h = ag::add(t, x, attn(t, ln1(t, x), ln1(t, x)));
        return ag::add(t, h, ff(t, ln2(t, h)));
    }
};

// ------------------------------------------------------------------ AdamW

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    int64_t step_count = 0;
    std::map<std::string, Mat> m_, v_;

    void step(ParamStore& ps) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (const auto& name : ps.names()) {
            Var p = ps.at(name);
            if (!p->requires_grad) continue;
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() == 0) {
                m = Mat::Zero(p->rows(), p->cols());
                v = Mat::Zero(p->rows(), p->cols());
            }
            m = beta1 * m + (1.0 - beta1) * p->grad;
            v = (beta2 * v.array() + (1.0 - beta2) * p->grad.array().square()).matrix();
            Mat mh = m / bc1;
            Mat vh = v / bc2;
            p->val -= lr * (mh.array() / (vh.array().sqrt() + eps)).matrix();
            p->val -= lr * weight_decay * p->val;  // decoupled decay
        }
    }
};

// Cosine annealing from lr0 down to lr_min over total steps.
inline double cosine_lr(double lr0, double lr_min, int64_t step, int64_t total) {
    if (total <= 0) return lr0;
    double s = std::min<double>(static_cast<double>(step), static_cast<double>(total));
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * s / static_cast<double>(total)));
}

// -------------------------------------------------------- checkpoint format
// Binary container:
//   magic "MLCKPT1\n", u32 format version, u32 param count,
//   per param: u32 name length, name bytes, u64 rows, u64 cols, doubles.
// Followed by an optional optimizer section when `opt` is given:
//   "OPT" marker, i64 step count, and m/v moments in param order.

namespace detail {
template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
}
inline void write_mat(std::ostream& os, const Mat& m) {
    write_pod<uint64_t>(os, static_cast<uint64_t>(m.rows()));
    write_pod<uint64_t>(os, static_cast<uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
}
inline Mat read_mat(std::istream& is) {
    uint64_t r, c;
    read_pod(is, r);
    read_pod(is, c);
    Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return m;
}
}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamStore& ps,
                            const AdamW* opt = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write("MLCKPT1\n", 8);
    detail::write_pod<uint32_t>(os, kCheckpointVersion);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ps.size()));
    for (const auto& name : ps.names()) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_mat(os, ps.at(name)->val);
    }
    if (opt) {
        os.write("OPT", 3);
        detail::write_pod<int64_t>(os, opt->step_count);
        for (const auto& name : ps.names()) {
            auto im = opt->m_.find(name);
            auto iv = opt->v_.find(name);
            Mat zero = Mat::Zero(ps.at(name)->rows(), ps.at(name)->cols());
            detail::write_mat(os, im != opt->m_.end() ? im->second : zero);
            detail::write_mat(os, iv != opt->v_.end() ? iv->second : zero);
        }
    }
}

// Loads values into an already-constructed ParamStore with identical names.
inline void load_checkpoint(const std::string& path, ParamStore& ps, AdamW* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "MLCKPT1\n")
        throw std::runtime_error("checkpoint: bad magic");
    uint32_t version, count;
    detail::read_pod(is, version);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    detail::read_pod(is, count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len;
        detail::read_pod(is, len);
        std::string name(len, '\0');
        is.read(name.data(), len);
        Mat m = detail::read_mat(is);
        if (!ps.has(name)) throw std::runtime_error("checkpoint: unknown parameter " + name);
        Var p = ps.at(name);
        if (p->rows() != m.rows() || p->cols() != m.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        p->val = std::move(m);
    }
    if (opt) {
        char marker[3];
        is.read(marker, 3);
        if (!is || std::string(marker, 3) != "OPT")
            throw std::runtime_error("checkpoint: optimizer state missing");
        detail::read_pod(is, opt->step_count);
        for (const auto& name : ps.names()) {
            opt->m_[name] = detail::read_mat(is);
            opt->v_[name] = detail::read_mat(is);
        }
    }
}

}  // namespace mlcap::nn

#endif
