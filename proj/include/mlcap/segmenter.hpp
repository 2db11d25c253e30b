#ifndef MLCAP_SEGMENTER_HPP
#define MLCAP_SEGMENTER_HPP

// Toy query-based instance segmenter. A per-voxel MLP encodes (normalized
// coordinates, color) into dense features F; a fixed set of learned queries
// is refined over two rounds of cross-attention against F; masks come from
// query/voxel dot-product scores and classes from a linear head. The
// interface it exposes downstream (F, refined queries, voxel masks, class
// logits) is what the captioning stage consumes.

#include "mlcap/corpus.hpp"
#include "mlcap/hungarian.hpp"
#include "mlcap/nn.hpp"
#include "mlcap/voxel.hpp"

#include <string>
#include <vector>

namespace mlcap {

struct SegmenterConfig {
    int num_queries = 100;
    int feature_dim = 128;
    int num_classes = 22;  // without the trailing no-object slot
    int refine_rounds = 2;
    int mlp_hidden = 64;
    int heads = 4;
    double mask_threshold = 0.5;  // on sigmoid of mask logits
};

struct InstancePrediction {
    Eigen::VectorXd refined_query;
    std::vector<uint8_t> mask;      // binary over voxels
    Eigen::VectorXd class_logits;   // C + 1, last = no-object
    double confidence = 0.0;        // 1 - p(no-object)
};

struct SceneEncoding {
    ag::Mat dense_features;  // N_vox x D
    std::vector<InstancePrediction> predictions;
};

// Graph-valued forward pass, shared between training and inference.
struct SegmenterForward {
    ag::Var features;      // N_vox x D
    ag::Var queries;       // N_q x D
    ag::Var mask_logits;   // N_q x N_vox
    ag::Var class_logits;  // N_q x (C+1)
};

class Segmenter {
public:
    Segmenter(SegmenterConfig cfg, uint64_t seed) : cfg_(cfg) {
        auto rng = make_rng(seed, "segmenter-init");
        enc1_ = nn::Linear(params_, "seg.enc1", 6, cfg.mlp_hidden, rng);
        enc2_ = nn::Linear(params_, "seg.enc2", cfg.mlp_hidden, cfg.feature_dim, rng);
        query_embed_ = params_.create("seg.queries", cfg.num_queries, cfg.feature_dim, rng, 0.5);
        for (int r = 0; r < cfg.refine_rounds; ++r) {
            std::string p = "seg.refine" + std::to_string(r);
            cross_.emplace_back(params_, p + ".attn", cfg.feature_dim, cfg.heads, rng);
            ffn_.emplace_back(params_, p + ".ff", cfg.feature_dim, 2 * cfg.feature_dim, rng);
            ln_a_.emplace_back(params_, p + ".lna", cfg.feature_dim);
            ln_f_.emplace_back(params_, p + ".lnf", cfg.feature_dim);
        }
        class_head_ = nn::Linear(params_, "seg.class", cfg.feature_dim, cfg.num_classes + 1, rng);
    }

    const SegmenterConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // Voxel input rows: coords normalized to the scene's bounding box, colors.
    static ag::Mat voxel_inputs(const VoxelScene& scene) {
        const size_t n = scene.num_voxels();
        ag::Mat in(static_cast<Eigen::Index>(n), 6);
        Eigen::Vector3d lo(1e30, 1e30, 1e30), hi = -lo;
        for (const auto& k : scene.coords) {
            Eigen::Vector3d c(k.x, k.y, k.z);
            lo = lo.cwiseMin(c);
            hi = hi.cwiseMax(c);
        }
        Eigen::Vector3d span = (hi - lo).cwiseMax(1.0);
        for (size_t v = 0; v < n; ++v) {
            const auto& k = scene.coords[v];
            in(static_cast<Eigen::Index>(v), 0) = (k.x - lo.x()) / span.x() - 0.5;
            in(static_cast<Eigen::Index>(v), 1) = (k.y - lo.y()) / span.y() - 0.5;
            in(static_cast<Eigen::Index>(v), 2) = (k.z - lo.z()) / span.z() - 0.5;
            for (int c = 0; c < 3; ++c)
                in(static_cast<Eigen::Index>(v), 3 + c) = scene.colors[v][static_cast<size_t>(c)];
        }
        return in;
    }

    SegmenterForward forward(ag::Tape& t, const VoxelScene& scene) const {
        ag::Var in = ag::make_const(voxel_inputs(scene));
        ag::Var f = enc2_(t, ag::relu(t, enc1_(t, in)));
        ag::Var q = t.node(query_embed_->val, query_embed_->requires_grad,
                           [qe = query_embed_](ag::Node& n) {
                               if (qe->requires_grad) qe->grad += n.grad;
                           });
        for (size_t r = 0; r < cross_.size(); ++r) {
            q = ag::add(t, q, cross_[r](t, ln_a_[r](t, q), f));
            q = ag::add(t, q, ffn_[r](t, ln_f_[r](t, q)));
        }
        SegmenterForward out;
        out.features = f;
        out.queries = q;
        out.mask_logits =
            ag::scale(t, ag::matmul_nt(t, q, f), 1.0 / std::sqrt(static_cast<double>(cfg_.feature_dim)));
        out.class_logits = class_head_(t, q);
        return out;
    }

    // Value-level inference: N_q predictions with binary masks, class
    // logits and confidence, plus the dense features.
    SceneEncoding predict_instances(const VoxelScene& scene) const {
        ag::Tape t;
        SegmenterForward fwd = forward(t, scene);
        SceneEncoding enc;
        enc.dense_features = fwd.features->val;
        const Eigen::Index nq = fwd.queries->rows();
        const Eigen::Index nv = fwd.mask_logits->cols();
        double logit_thr = std::log(cfg_.mask_threshold / (1.0 - cfg_.mask_threshold));
        for (Eigen::Index i = 0; i < nq; ++i) {
            InstancePrediction p;
            p.refined_query = fwd.queries->val.row(i).transpose();
            p.mask.resize(static_cast<size_t>(nv));
            for (Eigen::Index v = 0; v < nv; ++v)
                p.mask[static_cast<size_t>(v)] = fwd.mask_logits->val(i, v) > logit_thr ? 1 : 0;
            p.class_logits = fwd.class_logits->val.row(i).transpose();
            Eigen::ArrayXd e = (p.class_logits.array() - p.class_logits.maxCoeff()).exp();
            p.confidence = 1.0 - e(cfg_.num_classes) / e.sum();
            enc.predictions.push_back(std::move(p));
        }
        return enc;
    }

private:
    SegmenterConfig cfg_;
    nn::ParamStore params_;
    nn::Linear enc1_, enc2_, class_head_;
    ag::Var query_embed_;
    std::vector<nn::MultiHeadAttention> cross_;
    std::vector<nn::FeedForward> ffn_;
    std::vector<nn::LayerNorm> ln_a_, ln_f_;
};

// Ground-truth binary voxel masks by majority point ownership (ties go to
// the lower object id), one mask per scene object.
inline std::vector<std::vector<uint8_t>> gt_voxel_masks(const SyntheticScene& scene,
                                                        const VoxelScene& vox) {
    const size_t nv = vox.num_voxels();
    const int n_obj = static_cast<int>(scene.objects.size());
    std::vector<std::vector<int>> votes(nv, std::vector<int>());
    for (auto& v : votes) v.assign(static_cast<size_t>(n_obj) + 1, 0);  // last slot = background
    for (size_t i = 0; i < scene.num_points(); ++i) {
        int owner = scene.point_object[i];
        size_t v = static_cast<size_t>(vox.point_to_voxel[i]);
        votes[v][owner >= 0 ? static_cast<size_t>(owner) : static_cast<size_t>(n_obj)]++;
    }
    std::vector<std::vector<uint8_t>> masks(static_cast<size_t>(n_obj),
                                            std::vector<uint8_t>(nv, 0));
    for (size_t v = 0; v < nv; ++v) {
        int best = n_obj, best_count = votes[v][static_cast<size_t>(n_obj)];
        for (int o = 0; o < n_obj; ++o)
            if (votes[v][static_cast<size_t>(o)] > best_count) {
                best = o;
                best_count = votes[v][static_cast<size_t>(o)];
            }
        if (best < n_obj) masks[static_cast<size_t>(best)][v] = 1;
    }
    return masks;
}

// Matching cost between binarized predicted masks and GT masks: 1 - IoU.
inline Eigen::MatrixXd matching_cost(const std::vector<std::vector<uint8_t>>& gt_masks,
                                     const std::vector<InstancePrediction>& preds) {
    Eigen::MatrixXd cost(static_cast<Eigen::Index>(gt_masks.size()),
                         static_cast<Eigen::Index>(preds.size()));
    for (size_t g = 0; g < gt_masks.size(); ++g)
        for (size_t p = 0; p < preds.size(); ++p)
            cost(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(p)) =
                1.0 - mask_iou(gt_masks[g], preds[p].mask);
    return cost;
}

// One training loss evaluation for a scene: Hungarian-matched BCE mask loss
// plus class cross-entropy over all queries (unmatched queries are
// supervised as no-object).
inline ag::Var segmenter_loss(ag::Tape& t, const Segmenter& seg, const SegmenterForward& fwd,
                              const std::vector<std::vector<uint8_t>>& gt_masks,
                              const std::vector<int>& gt_classes,
                              const Assignment& assignment) {
    const int nq = static_cast<int>(fwd.queries->rows());
    const int no_object = seg.config().num_classes;
    const size_t nv = gt_masks.empty() ? 0 : gt_masks[0].size();

    std::vector<int> class_targets(static_cast<size_t>(nq), no_object);
    std::vector<ag::Var> terms;
    std::vector<double> weights;
    for (size_t g = 0; g < gt_masks.size(); ++g) {
        int p = assignment.gt_to_pred[g];
        class_targets[static_cast<size_t>(p)] = gt_classes[g];
        ag::Mat target(1, static_cast<Eigen::Index>(nv));
        for (size_t v = 0; v < nv; ++v) target(0, static_cast<Eigen::Index>(v)) = gt_masks[g][v];
        ag::Var row = ag::slice_rows(t, fwd.mask_logits, static_cast<Eigen::Index>(p), 1);
        terms.push_back(ag::bce_with_logits(t, row, target));
        weights.push_back(1.0 / static_cast<double>(gt_masks.size()));
    }
    // class CE over all queries; matched ones dominate via per-row targets
    terms.push_back(ag::cross_entropy_rows(t, fwd.class_logits, class_targets));
    weights.push_back(1.0);
    return ag::weighted_sum(t, terms, weights);
}

}  // namespace mlcap

#endif
