#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace segnas {

// Mean over classes of |intersection| / |union| for binary masks; a class
// absent from both masks contributes 1.
inline double mean_iou(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("mean_iou: size mismatch");
    double total = 0;
    for (int cls = 0; cls < 2; ++cls) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == cls, g = gt[i] == cls;
            inter += p && g;
            uni += p || g;
        }
        total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return total / 2.0;
}

// ---- object-level precision-recall over IoU thresholds ----

struct PrPoint {
    double iou_threshold = 0;
    double precision = 0;
    double recall = 0;
    int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
    double mean_iou = 0;
    std::vector<PrPoint> pr_points;
};

// 4-connected component labelling; returns label per pixel (-1 background)
// and the number of components.
inline int connected_components(const std::vector<int>& mask, int H, int W,
                                std::vector<int>& labels) {
    labels.assign(mask.size(), -1);
    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0 || labels[i] != -1) continue;
        labels[i] = next;
        stack.push_back(i);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            const int h = static_cast<int>(cur) / W, w = static_cast<int>(cur) % W;
            const int dh[] = {-1, 1, 0, 0}, dw[] = {0, 0, -1, 1};
            for (int d = 0; d < 4; ++d) {
                const int nh = h + dh[d], nw = w + dw[d];
                if (nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
                const std::size_t ni = static_cast<std::size_t>(nh) * W + nw;
                if (mask[ni] != 0 && labels[ni] == -1) {
                    labels[ni] = next;
                    stack.push_back(ni);
                }
            }
        }
        ++next;
    }
    return next;
}

// Object matches for one image: greedy one-to-one by descending pairwise IoU.
inline std::vector<double> match_objects(const std::vector<int>& pred,
                                         const std::vector<int>& gt, int H, int W,
                                         int& n_pred, int& n_gt) {
    std::vector<int> pl, gl;
    n_pred = connected_components(pred, H, W, pl);
    n_gt = connected_components(gt, H, W, gl);
    std::vector<std::size_t> area_p(n_pred, 0), area_g(n_gt, 0);
    std::map<std::pair<int, int>, std::size_t> inter;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pl[i] >= 0) ++area_p[pl[i]];
        if (gl[i] >= 0) ++area_g[gl[i]];
        if (pl[i] >= 0 && gl[i] >= 0) ++inter[{pl[i], gl[i]}];
    }
    struct Pair {
        double iou;
        int p, g;
    };
    std::vector<Pair> pairs;
    for (const auto& [pg, ins] : inter) {
        const double u = static_cast<double>(area_p[pg.first] + area_g[pg.second] - ins);
        pairs.push_back({static_cast<double>(ins) / u, pg.first, pg.second});
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        return std::tie(a.p, a.g) < std::tie(b.p, b.g);
    });
    std::vector<bool> used_p(n_pred, false), used_g(n_gt, false);
    std::vector<double> match_ious;
    for (const auto& pr : pairs) {
        if (used_p[pr.p] || used_g[pr.g]) continue;
        used_p[pr.p] = used_g[pr.g] = true;
        match_ious.push_back(pr.iou);
    }
    return match_ious;
}

// Precision := 1 when there are no predicted objects (documented convention).
inline EvalReport pr_curve(const std::vector<std::vector<int>>& preds,
                           const std::vector<std::vector<int>>& gts, int H, int W,
                           const std::vector<double>& thresholds) {
    if (preds.size() != gts.size()) throw std::invalid_argument("pr_curve: count mismatch");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] <= thresholds[i - 1])
            throw std::invalid_argument("pr_curve: thresholds must be strictly increasing");
    std::vector<std::vector<double>> all_matches;
    int total_pred = 0, total_gt = 0;
    double iou_sum = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int np = 0, ng = 0;
        all_matches.push_back(match_objects(preds[i], gts[i], H, W, np, ng));
        total_pred += np;
        total_gt += ng;
        iou_sum += mean_iou(preds[i], gts[i]);
    }
    EvalReport rep;
    rep.mean_iou = preds.empty() ? 0 : iou_sum / static_cast<double>(preds.size());
    for (double t : thresholds) {
        int tp = 0;
        for (const auto& m : all_matches)
            for (double iou : m)
                if (iou >= t) ++tp;
        PrPoint pt;
        pt.iou_threshold = t;
        pt.tp = tp;
        pt.fp = total_pred - tp;
        pt.fn = total_gt - tp;
        pt.precision = total_pred == 0 ? 1.0 : static_cast<double>(tp) / total_pred;
        pt.recall = total_gt == 0 ? 1.0 : static_cast<double>(tp) / total_gt;
        rep.pr_points.push_back(pt);
    }
    return rep;
}

inline void save_pr_csv(const EvalReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "iou_threshold,precision,recall,tp,fp,fn\n";
    for (const auto& p : rep.pr_points)
        f << p.iou_threshold << "," << p.precision << "," << p.recall << "," << p.tp << ","
          << p.fp << "," << p.fn << "\n";
}

}  // namespace segnas
