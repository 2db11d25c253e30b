#ifndef MLCAP_VOXEL_HPP
#define MLCAP_VOXEL_HPP

#include "mlcap/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace mlcap {

struct VoxelKey {
    int32_t x, y, z;
    bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
    size_t operator()(const VoxelKey& k) const {
        uint64_t h = static_cast<uint32_t>(k.x);
        h = h * 0x9e3779b97f4a7c15ull + static_cast<uint32_t>(k.y);
        h = h * 0x9e3779b97f4a7c15ull + static_cast<uint32_t>(k.z);
        return static_cast<size_t>(h ^ (h >> 32));
    }
};

struct VoxelScene {
    std::vector<VoxelKey> coords;
    std::vector<std::array<float, 3>> colors;  // mean of member point colors
    double voxel_size = 0.02;
    std::vector<int> point_to_voxel;  // total map, one entry per input point

    size_t num_voxels() const { return coords.size(); }
};

// Voxel index = floor(coordinate / voxel_size) per axis; voxel order is
// first-visit order over the input points (deterministic).
inline VoxelScene voxelize(std::span<const float> points, std::span<const float> colors,
                           double voxel_size) {
    if (points.empty()) throw std::invalid_argument("voxelize: empty point set");
    if (voxel_size <= 0.0) throw std::invalid_argument("voxelize: voxel_size must be > 0");
    size_t n = points.size() / 3;
    VoxelScene vs;
    vs.voxel_size = voxel_size;
    vs.point_to_voxel.resize(n);
    std::unordered_map<VoxelKey, int, VoxelKeyHash> index;
    std::vector<std::array<double, 3>> color_sum;
    std::vector<int> counts;
    for (size_t i = 0; i < n; ++i) {
        // forward epsilon absorbs float32 quantization right below a
        // voxel boundary (e.g. 0.02f / 0.02 = 0.9999999...)
        constexpr double eps = 1e-7;
        VoxelKey k{static_cast<int32_t>(std::floor(points[3 * i] / voxel_size + eps)),
                   static_cast<int32_t>(std::floor(points[3 * i + 1] / voxel_size + eps)),
                   static_cast<int32_t>(std::floor(points[3 * i + 2] / voxel_size + eps))};
        auto [it, inserted] = index.try_emplace(k, static_cast<int>(vs.coords.size()));
        if (inserted) {
            vs.coords.push_back(k);
            color_sum.push_back({0, 0, 0});
            counts.push_back(0);
        }
        int v = it->second;
        vs.point_to_voxel[i] = v;
        for (int c = 0; c < 3; ++c) color_sum[static_cast<size_t>(v)][static_cast<size_t>(c)] +=
            colors[3 * i + static_cast<size_t>(c)];
        counts[static_cast<size_t>(v)]++;
    }
    vs.colors.resize(vs.coords.size());
    for (size_t v = 0; v < vs.coords.size(); ++v)
        for (int c = 0; c < 3; ++c)
            vs.colors[v][static_cast<size_t>(c)] =
                static_cast<float>(color_sum[v][static_cast<size_t>(c)] / counts[v]);
    return vs;
}

struct SegmentTable {
    std::vector<int> segment_id;  // per voxel, contiguous from 0
    int num_segments = 0;
};

// Connected components over the 26-neighborhood voxel graph, with an edge
// wherever the color distance of the two voxels is strictly below the
// merge threshold. Segment ids are assigned in voxel-index order.
inline SegmentTable oversegment(const VoxelScene& scene, double merge_threshold) {
    if (scene.num_voxels() == 0) throw std::invalid_argument("oversegment: empty scene");
    std::unordered_map<VoxelKey, int, VoxelKeyHash> index;
    for (size_t v = 0; v < scene.num_voxels(); ++v) index[scene.coords[v]] = static_cast<int>(v);

    auto color_dist = [&](int a, int b) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            double d = static_cast<double>(scene.colors[static_cast<size_t>(a)][static_cast<size_t>(c)]) -
                       scene.colors[static_cast<size_t>(b)][static_cast<size_t>(c)];
            s += d * d;
        }
        return std::sqrt(s);
    };

    SegmentTable table;
    table.segment_id.assign(scene.num_voxels(), -1);
    for (size_t seed = 0; seed < scene.num_voxels(); ++seed) {
        if (table.segment_id[seed] >= 0) continue;
        int sid = table.num_segments++;
        std::queue<int> q;
        q.push(static_cast<int>(seed));
        table.segment_id[seed] = sid;
        while (!q.empty()) {
            int v = q.front();
            q.pop();
            const VoxelKey& k = scene.coords[static_cast<size_t>(v)];
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dz = -1; dz <= 1; ++dz) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        auto it = index.find({k.x + dx, k.y + dy, k.z + dz});
                        if (it == index.end()) continue;
                        int nb = it->second;
                        if (table.segment_id[static_cast<size_t>(nb)] >= 0) continue;
                        if (color_dist(v, nb) < merge_threshold) {
                            table.segment_id[static_cast<size_t>(nb)] = sid;
                            q.push(nb);
                        }
                    }
        }
    }
    return table;
}

// Axis-aligned box spanned by the set voxels: [idx*size, (idx+1)*size].
inline Aabb mask_to_aabb(const std::vector<uint8_t>& mask, const VoxelScene& scene) {
    if (mask.size() != scene.num_voxels()) throw std::invalid_argument("mask_to_aabb: mask length");
    Aabb box;
    bool any = false;
    for (size_t v = 0; v < mask.size(); ++v) {
        if (!mask[v]) continue;
        const VoxelKey& k = scene.coords[v];
        Eigen::Vector3d lo(k.x * scene.voxel_size, k.y * scene.voxel_size, k.z * scene.voxel_size);
        Eigen::Vector3d hi = lo.array() + scene.voxel_size;
        if (!any) {
            box.min = lo;
            box.max = hi;
            any = true;
        } else {
            box.min = box.min.cwiseMin(lo);
            box.max = box.max.cwiseMax(hi);
        }
    }
    if (!any) throw std::invalid_argument("mask_to_aabb: empty mask");
    return box;
}

// IoU between two binary voxel masks of equal length.
inline double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mask_iou: length mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool ai = a[i] != 0, bi = b[i] != 0;
        inter += (ai && bi);
        uni += (ai || bi);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace mlcap

#endif
