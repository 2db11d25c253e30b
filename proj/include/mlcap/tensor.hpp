#ifndef MLCAP_TENSOR_HPP
#define MLCAP_TENSOR_HPP

// Minimal reverse-mode autograd over dense 2D matrices. Everything is
// double precision; the models here are small enough that this is both
// fast enough and lets gradient checks run at full 64-bit accuracy.
//
// Usage: a Tape records operation nodes in creation order (a valid
// topological order). Parameters are persistent Vars living outside the
// tape; their .grad accumulates across backward() calls until zeroed.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

namespace mlcap::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Mat val;
    Mat grad;               // same shape as val, lazily zero-initialized
    bool requires_grad = false;
    std::function<void(Node&)> backward;  // scatter this->grad into parents

    Node() = default;
    explicit Node(Mat v, bool rg = false) : val(std::move(v)), requires_grad(rg) {
        grad = Mat::Zero(val.rows(), val.cols());
    }

    Eigen::Index rows() const { return val.rows(); }
    Eigen::Index cols() const { return val.cols(); }
    double scalar() const { return val(0, 0); }
    void zero_grad() { grad.setZero(); }
};

inline Var make_param(Mat v) { return std::make_shared<Node>(std::move(v), true); }
inline Var make_const(Mat v) { return std::make_shared<Node>(std::move(v), false); }

class Tape {
public:
    Var node(Mat v, bool rg, std::function<void(Node&)> bwd = nullptr) {
        auto n = std::make_shared<Node>(std::move(v), rg);
        n->backward = std::move(bwd);
        nodes_.push_back(n);
        return n;
    }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse creation
    // order. Nodes created after `loss` contribute nothing (zero grad).
    void backward(const Var& loss) {
        if (loss->rows() != 1 || loss->cols() != 1)
            throw std::invalid_argument("backward: loss must be a 1x1 scalar");
        loss->grad(0, 0) += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (n.requires_grad && n.backward) n.backward(n);
        }
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

private:
    std::vector<Var> nodes_;
};

// ---------------------------------------------------------------- basic ops

inline Var matmul(Tape& t, const Var& a, const Var& b) {
    if (a->cols() != b->rows()) throw std::invalid_argument("matmul: inner dims");
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(a->val * b->val, rg, [a, b](Node& n) {
        if (a->requires_grad) a->grad.noalias() += n.grad * b->val.transpose();
        if (b->requires_grad) b->grad.noalias() += a->val.transpose() * n.grad;
    });
}

// a * b^T
inline Var matmul_nt(Tape& t, const Var& a, const Var& b) {
    if (a->cols() != b->cols()) throw std::invalid_argument("matmul_nt: inner dims");
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(a->val * b->val.transpose(), rg, [a, b](Node& n) {
        if (a->requires_grad) a->grad.noalias() += n.grad * b->val;
        if (b->requires_grad) b->grad.noalias() += n.grad.transpose() * a->val;
    });
}

inline Var add(Tape& t, const Var& a, const Var& b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw std::invalid_argument("add: shape mismatch");
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(a->val + b->val, rg, [a, b](Node& n) {
        if (a->requires_grad) a->grad += n.grad;
        if (b->requires_grad) b->grad += n.grad;
    });
}

inline Var sub(Tape& t, const Var& a, const Var& b) {
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(a->val - b->val, rg, [a, b](Node& n) {
        if (a->requires_grad) a->grad += n.grad;
        if (b->requires_grad) b->grad -= n.grad;
    });
}

// broadcast-add a 1xC row vector to every row of a
inline Var add_rowvec(Tape& t, const Var& a, const Var& row) {
    if (row->rows() != 1 || row->cols() != a->cols())
        throw std::invalid_argument("add_rowvec: shape mismatch");
    bool rg = a->requires_grad || row->requires_grad;
    Mat v = a->val;
    v.rowwise() += row->val.row(0);
    return t.node(std::move(v), rg, [a, row](Node& n) {
        if (a->requires_grad) a->grad += n.grad;
        if (row->requires_grad) row->grad.row(0) += n.grad.colwise().sum();
    });
}

inline Var mul(Tape& t, const Var& a, const Var& b) {
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(a->val.cwiseProduct(b->val), rg, [a, b](Node& n) {
        if (a->requires_grad) a->grad += n.grad.cwiseProduct(b->val);
        if (b->requires_grad) b->grad += n.grad.cwiseProduct(a->val);
    });
}

inline Var scale(Tape& t, const Var& a, double s) {
    return t.node(a->val * s, a->requires_grad, [a, s](Node& n) {
        if (a->requires_grad) a->grad += n.grad * s;
    });
}

inline Var relu(Tape& t, const Var& a) {
    return t.node(a->val.cwiseMax(0.0), a->requires_grad, [a](Node& n) {
        if (!a->requires_grad) return;
        a->grad += n.grad.cwiseProduct((a->val.array() > 0.0).cast<double>().matrix());
    });
}

inline Var gelu(Tape& t, const Var& a) {
    // tanh approximation (GPT2 style)
    const double k = std::sqrt(2.0 / M_PI);
    Mat x = a->val;
    Mat inner = (k * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat th = inner.array().tanh().matrix();
    Mat out = (0.5 * x.array() * (1.0 + th.array())).matrix();
    return t.node(std::move(out), a->requires_grad, [a, k, th, inner](Node& n) {
        if (!a->requires_grad) return;
        auto x = a->val.array();
        auto sech2 = 1.0 - th.array().square();
        auto dinner = k * (1.0 + 3.0 * 0.044715 * x.square());
        auto d = 0.5 * (1.0 + th.array()) + 0.5 * x * sech2 * dinner;
        a->grad += n.grad.cwiseProduct(d.matrix());
    });
}

inline Var sigmoid(Tape& t, const Var& a) {
    Mat s = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
    return t.node(s, a->requires_grad, [a, s](Node& n) {
        if (!a->requires_grad) return;
        a->grad += n.grad.cwiseProduct((s.array() * (1.0 - s.array())).matrix());
    });
}

// Row-wise softmax with an optional additive mask (use -inf entries for
// positions that must receive exactly zero weight).
inline Var softmax_rows(Tape& t, const Var& a, const Mat* add_mask = nullptr) {
    Mat z = a->val;
    if (add_mask) {
        if (add_mask->rows() != z.rows() || add_mask->cols() != z.cols())
            throw std::invalid_argument("softmax_rows: mask shape");
        z += *add_mask;
    }
    Mat p(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        double m = z.row(r).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            // std::exp(-inf) is exactly 0; Eigen's packet exp is not
            double e = std::exp(z(r, c) - m);
            p(r, c) = e;
            sum += e;
        }
        p.row(r) /= sum;
    }
    return t.node(p, a->requires_grad, [a, p](Node& n) {
        if (!a->requires_grad) return;
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            double dot = n.grad.row(r).dot(p.row(r));
            a->grad.row(r) += (p.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
        }
    });
}

inline Var layernorm_rows(Tape& t, const Var& a, const Var& gain, const Var& bias,
                          double eps = 1e-5) {
    const Eigen::Index R = a->rows(), C = a->cols();
    Mat xhat(R, C);
    Eigen::ArrayXd inv_std(R);
    for (Eigen::Index r = 0; r < R; ++r) {
        double mu = a->val.row(r).mean();
        double var = (a->val.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = ((a->val.row(r).array() - mu) * inv_std(r)).matrix();
    }
    Mat out = xhat;
    out.array().rowwise() *= gain->val.row(0).array();
    out.array().rowwise() += bias->val.row(0).array();
    bool rg = a->requires_grad || gain->requires_grad || bias->requires_grad;
    return t.node(std::move(out), rg, [a, gain, bias, xhat, inv_std](Node& n) {
        const Eigen::Index C = xhat.cols();
        if (gain->requires_grad)
            gain->grad.row(0) += n.grad.cwiseProduct(xhat).colwise().sum();
        if (bias->requires_grad) bias->grad.row(0) += n.grad.colwise().sum();
        if (!a->requires_grad) return;
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
            Eigen::ArrayXd dxhat = n.grad.row(r).array() * gain->val.row(0).array();
            double m1 = dxhat.mean();
            double m2 = (dxhat * xhat.row(r).array().transpose()).mean();
            a->grad.row(r) +=
                (inv_std(r) * (dxhat - m1 - xhat.row(r).array().transpose() * m2)).matrix();
        }
    });
}

inline Var concat_rows(Tape& t, const Var& a, const Var& b) {
    if (a->cols() != b->cols()) throw std::invalid_argument("concat_rows: col mismatch");
    Mat v(a->rows() + b->rows(), a->cols());
    v.topRows(a->rows()) = a->val;
    v.bottomRows(b->rows()) = b->val;
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(std::move(v), rg, [a, b](Node& n) {
        if (a->requires_grad) a->grad += n.grad.topRows(a->rows());
        if (b->requires_grad) b->grad += n.grad.bottomRows(b->rows());
    });
}

inline Var slice_rows(Tape& t, const Var& a, Eigen::Index r0, Eigen::Index nrows) {
    return t.node(a->val.middleRows(r0, nrows), a->requires_grad, [a, r0, nrows](Node& n) {
        if (a->requires_grad) a->grad.middleRows(r0, nrows) += n.grad;
    });
}

inline Var slice_cols(Tape& t, const Var& a, Eigen::Index c0, Eigen::Index ncols) {
    return t.node(a->val.middleCols(c0, ncols), a->requires_grad, [a, c0, ncols](Node& n) {
        if (a->requires_grad) a->grad.middleCols(c0, ncols) += n.grad;
    });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index R = parts[0]->rows(), C = 0;
    bool rg = false;
    for (auto& p : parts) {
        C += p->cols();
        rg = rg || p->requires_grad;
    }
    Mat v(R, C);
    Eigen::Index off = 0;
    for (auto& p : parts) {
        v.middleCols(off, p->cols()) = p->val;
        off += p->cols();
    }
    return t.node(std::move(v), rg, [parts](Node& n) {
        Eigen::Index off = 0;
        for (auto& p : parts) {
            if (p->requires_grad) p->grad += n.grad.middleCols(off, p->cols());
            off += p->cols();
        }
    });
}

// mean over rows -> 1xC
inline Var mean_rows(Tape& t, const Var& a) {
    if (a->rows() == 0) throw std::invalid_argument("mean_rows: empty");
    Mat v = a->val.colwise().mean();
    double inv = 1.0 / static_cast<double>(a->rows());
    return t.node(std::move(v), a->requires_grad, [a, inv](Node& n) {
        if (!a->requires_grad) return;
        for (Eigen::Index r = 0; r < a->rows(); ++r) a->grad.row(r) += n.grad.row(0) * inv;
    });
}

// gather rows of `table` by index; table is typically an embedding matrix
inline Var embedding_rows(Tape& t, const Var& table, const std::vector<int>& ids) {
    Mat v(static_cast<Eigen::Index>(ids.size()), table->cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->rows())
            throw std::out_of_range("embedding_rows: id out of range");
        v.row(static_cast<Eigen::Index>(i)) = table->val.row(ids[i]);
    }
    return t.node(std::move(v), table->requires_grad, [table, ids](Node& n) {
        if (!table->requires_grad) return;
        for (size_t i = 0; i < ids.size(); ++i)
            table->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
}

// Token-level cross entropy averaged over positions whose target != ignore_id.
// Returns a 1x1 scalar. If every position is ignored, returns 0.
inline Var cross_entropy_rows(Tape& t, const Var& logits, const std::vector<int>& targets,
                              int ignore_id = -1) {
    if (static_cast<Eigen::Index>(targets.size()) != logits->rows())
        throw std::invalid_argument("cross_entropy_rows: target count");
    const Eigen::Index R = logits->rows(), C = logits->cols();
    Mat p(R, C);
    double loss = 0.0;
    int counted = 0;
    for (Eigen::Index r = 0; r < R; ++r) {
        double m = logits->val.row(r).maxCoeff();
        Eigen::ArrayXd e = (logits->val.row(r).array() - m).exp();
        double Z = e.sum();
        p.row(r) = (e / Z).matrix();
        if (targets[r] == ignore_id) continue;
        if (targets[r] < 0 || targets[r] >= C)
            throw std::out_of_range("cross_entropy_rows: target id");
        loss -= std::log(std::max(p(r, targets[r]), 1e-300));
        ++counted;
    }
    double inv = counted > 0 ? 1.0 / counted : 0.0;
    Mat v(1, 1);
    v(0, 0) = loss * inv;
    return t.node(v, logits->requires_grad, [logits, targets, p, inv, ignore_id](Node& n) {
        if (!logits->requires_grad) return;
        double g = n.grad(0, 0) * inv;
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            if (targets[r] == ignore_id) continue;
            logits->grad.row(r) += g * p.row(r);
            logits->grad(r, targets[r]) -= g;
        }
    });
}

// Soft-target cross entropy: -sum_k q_k * log softmax(logits)_k, where q is a
// fixed probability row (no gradient flows into q). logits: 1xC, q: 1xC.
inline Var soft_cross_entropy(Tape& t, const Var& logits, const Mat& q) {
    if (logits->rows() != 1 || q.rows() != 1 || q.cols() != logits->cols())
        throw std::invalid_argument("soft_cross_entropy: shape mismatch");
    const Eigen::Index C = q.cols();
    double m = logits->val.row(0).maxCoeff();
    double Z = 0.0;
    Mat p(1, C);
    for (Eigen::Index c = 0; c < C; ++c) {
        p(0, c) = std::exp(logits->val(0, c) - m);
        Z += p(0, c);
    }
    p /= Z;
    double logZ = std::log(Z);
    double loss = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) loss -= q(0, c) * (logits->val(0, c) - m - logZ);
    Mat v(1, 1);
    v(0, 0) = loss;
    return t.node(v, logits->requires_grad, [logits, q, p](Node& n) {
        if (!logits->requires_grad) return;
        double g = n.grad(0, 0);
        double qs = q.row(0).sum();
        logits->grad.row(0) += g * (qs * p.row(0) - q.row(0));
    });
}

// Binary cross entropy with logits, mean over all entries.
inline Var bce_with_logits(Tape& t, const Var& logits, const Mat& targets) {
    if (logits->rows() != targets.rows() || logits->cols() != targets.cols())
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    auto x = logits->val.array();
    auto y = targets.array();
    // numerically stable: max(x,0) - x*y + log(1+exp(-|x|))
    Mat l = (x.max(0.0) - x * y + (1.0 + (-x.abs()).exp()).log()).matrix();
    double inv = 1.0 / static_cast<double>(l.size());
    Mat v(1, 1);
    v(0, 0) = l.sum() * inv;
    return t.node(v, logits->requires_grad, [logits, targets, inv](Node& n) {
        if (!logits->requires_grad) return;
        double g = n.grad(0, 0) * inv;
        auto s = (1.0 / (1.0 + (-logits->val.array()).exp()));
        logits->grad += (g * (s - targets.array())).matrix();
    });
}

// Identity in value, blocks all gradient flow.
inline Var detach(Tape& t, const Var& a) { return t.node(a->val, false, nullptr); }

// Cosine distance 1 - <a,b>/(|a||b|) between two 1xD vectors.
inline Var cosine_distance(Tape& t, const Var& a, const Var& b, double eps = 1e-8) {
    if (a->rows() != 1 || b->rows() != 1 || a->cols() != b->cols())
        throw std::invalid_argument("cosine_distance: shape mismatch");
    double na = a->val.norm(), nb = b->val.norm();
    if (na < eps || nb < eps) throw std::domain_error("cosine_distance: zero-norm vector");
    double dot = a->val.row(0).dot(b->val.row(0));
    double c = dot / (na * nb);
    Mat v(1, 1);
    v(0, 0) = 1.0 - c;
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(v, rg, [a, b, na, nb, dot](Node& n) {
        double g = n.grad(0, 0);
        if (a->requires_grad)
            a->grad.row(0) += g * (dot / (na * na * na * nb) * a->val.row(0) - b->val.row(0) / (na * nb));
        if (b->requires_grad)
            b->grad.row(0) += g * (dot / (nb * nb * nb * na) * b->val.row(0) - a->val.row(0) / (na * nb));
    });
}

// Squared L2 distance between two 1xD vectors.
inline Var squared_l2(Tape& t, const Var& a, const Var& b) {
    Mat d = a->val - b->val;
    Mat v(1, 1);
    v(0, 0) = d.squaredNorm();
    bool rg = a->requires_grad || b->requires_grad;
    return t.node(v, rg, [a, b, d](Node& n) {
        double g = n.grad(0, 0);
        if (a->requires_grad) a->grad += 2.0 * g * d;
        if (b->requires_grad) b->grad -= 2.0 * g * d;
    });
}

// Weighted sum of 1x1 scalars.
inline Var weighted_sum(Tape& t, const std::vector<Var>& terms, const std::vector<double>& w) {
    if (terms.size() != w.size() || terms.empty())
        throw std::invalid_argument("weighted_sum: arity");
    double s = 0.0;
    bool rg = false;
    for (size_t i = 0; i < terms.size(); ++i) {
        s += w[i] * terms[i]->scalar();
        rg = rg || terms[i]->requires_grad;
    }
    Mat v(1, 1);
    v(0, 0) = s;
    return t.node(v, rg, [terms, w](Node& n) {
        double g = n.grad(0, 0);
        for (size_t i = 0; i < terms.size(); ++i)
            if (terms[i]->requires_grad) terms[i]->grad(0, 0) += g * w[i];
    });
}

}  // namespace mlcap::ag

#endif
