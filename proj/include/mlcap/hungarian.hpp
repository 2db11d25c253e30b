#ifndef MLCAP_HUNGARIAN_HPP
#define MLCAP_HUNGARIAN_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mlcap {

struct Assignment {
    std::vector<int> gt_to_pred;  // one prediction index per ground-truth row
    double total_cost = 0.0;
};

// Minimum-cost injective assignment of G ground-truth rows to P prediction
// columns (P >= G), Jonker-Volgenant style potentials in O(G^2 P).
// cost(g, p) is typically 1 - mask IoU.
inline Assignment hungarian_match(const Eigen::MatrixXd& cost) {
    const int G = static_cast<int>(cost.rows());
    const int P = static_cast<int>(cost.cols());
    if (G == 0) return {};
    if (P < G) throw std::invalid_argument("hungarian_match: fewer predictions than ground truth");
    if (!cost.allFinite()) throw std::invalid_argument("hungarian_match: non-finite cost entries");

    const double INF = std::numeric_limits<double>::infinity();
    // 1-based arrays, standard potentials formulation
    std::vector<double> u(static_cast<size_t>(G) + 1, 0.0), v(static_cast<size_t>(P) + 1, 0.0);
    std::vector<int> match(static_cast<size_t>(P) + 1, 0);  // column -> row
    std::vector<int> way(static_cast<size_t>(P) + 1, 0);

    for (int i = 1; i <= G; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(P) + 1, INF);
        std::vector<char> used(static_cast<size_t>(P) + 1, false);
        do {
            used[static_cast<size_t>(j0)] = true;
            int i0 = match[static_cast<size_t>(j0)], j1 = 0;
            double delta = INF;
            for (int j = 1; j <= P; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= P; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    Assignment out;
    out.gt_to_pred.assign(static_cast<size_t>(G), -1);
    for (int j = 1; j <= P; ++j) {
        if (match[static_cast<size_t>(j)] > 0)
            out.gt_to_pred[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
    }
    for (int g = 0; g < G; ++g) out.total_cost += cost(g, out.gt_to_pred[static_cast<size_t>(g)]);
    return out;
}

// Exhaustive minimum over all injective assignments; test oracle for small
// problems (max dimension ~7).
inline Assignment brute_force_match(const Eigen::MatrixXd& cost) {
    const int G = static_cast<int>(cost.rows());
    const int P = static_cast<int>(cost.cols());
    if (G == 0) return {};
    if (P < G) throw std::invalid_argument("brute_force_match: fewer predictions than ground truth");
    Assignment best;
    best.total_cost = std::numeric_limits<double>::infinity();
    std::vector<int> current(static_cast<size_t>(G), -1);
    std::vector<char> taken(static_cast<size_t>(P), false);
    // No branch pruning: with negative costs a partial sum above the best is
    // not a valid bound, and the problem sizes here do not need one.
    auto recurse = [&](auto&& self, int g, double acc) -> void {
        if (g == G) {
            if (acc >= best.total_cost) return;
            best.total_cost = acc;
            best.gt_to_pred = current;
            return;
        }
        for (int p = 0; p < P; ++p) {
            if (taken[static_cast<size_t>(p)]) continue;
            taken[static_cast<size_t>(p)] = true;
            current[static_cast<size_t>(g)] = p;
            self(self, g + 1, acc + cost(g, p));
            taken[static_cast<size_t>(p)] = false;
        }
    };
    recurse(recurse, 0, 0.0);
    return best;
}

}  // namespace mlcap

#endif
