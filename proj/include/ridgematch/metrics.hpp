#pragma once

// Verification (ROC, EER, TAR@FAR) and identification (CMC) metrics.
// Acceptance is `score >= threshold`.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ridgematch/error.hpp"
#include "ridgematch/msloss.hpp"

namespace ridgematch {

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct RocPoint {
  double threshold;
  double far;
  double tar;
};

struct TarAtFar {
  double tar = 0.0;
  double far = 0.0;
  double threshold = 0.0;
  // Fewer impostor scores than 1/far_target: the operating point is coarser
  // than the requested FAR.
  bool low_resolution = false;
};

struct ScoreReport {
  double eer = 0.0;
  std::map<double, TarAtFar> tar_at_far;
  std::vector<RocPoint> roc;
  std::vector<double> cmc;
  std::size_t genuine_count = 0;
  std::size_t impostor_count = 0;
};

inline ScoreSet genuine_impostor_split(const SimilarityMatrix& S) {
  ScoreSet out;
  for (std::size_t i = 0; i < S.rows(); ++i) {
    for (std::size_t j = 0; j < S.cols(); ++j) {
      if (S.is_masked(i, j)) continue;
      (S.genuine(i, j) ? out.genuine : out.impostor).push_back(S.scores(i, j));
    }
  }
  if (out.genuine.empty()) throw ProtocolError("no genuine pairs in score matrix");
  if (out.impostor.empty()) throw ProtocolError("no impostor pairs in score matrix");
  return out;
}

// One point per distinct score, ascending threshold, bracketed by the
// sentinels (-inf, 1, 1) and (+inf, 0, 0).
inline std::vector<RocPoint> roc(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty()) {
    throw ProtocolError("roc: genuine and impostor sets must be nonempty");
  }
  std::vector<double> g = scores.genuine, im = scores.impostor;
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<RocPoint> out;
  out.reserve(g.size() + im.size() + 2);
  out.push_back({-inf, 1.0, 1.0});
  // gi / ii index the first score >= the current threshold.
  std::size_t gi = 0, ii = 0;
  while (gi < g.size() || ii < im.size()) {
    double t = inf;
    if (gi < g.size()) t = g[gi];
    if (ii < im.size()) t = std::min(t, im[ii]);
    out.push_back({t, static_cast<double>(im.size() - ii) / ni, static_cast<double>(g.size() - gi) / ng});
    while (gi < g.size() && g[gi] == t) ++gi;
    while (ii < im.size() && im[ii] == t) ++ii;
  }
  out.push_back({inf, 0.0, 0.0});
  return out;
}

// FAR = FRR crossing, linearly interpolated between the bracketing ROC points.
inline double eer(const ScoreSet& scores) {
  const std::vector<RocPoint> pts = roc(scores);
  double prev_diff = pts[0].far - (1.0 - pts[0].tar);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const double diff = pts[k].far - (1.0 - pts[k].tar);
    if (diff <= 0.0) {
      if (diff == 0.0) return pts[k].far;
      const double lambda = prev_diff / (prev_diff - diff);
      return pts[k - 1].far + lambda * (pts[k].far - pts[k - 1].far);
    }
    prev_diff = diff;
  }
  return 0.0;  // unreachable: the last sentinel has diff -1
}

// TAR at the smallest threshold whose FAR <= far_target; no interpolation.
inline TarAtFar tar_at_far(const ScoreSet& scores, double far_target) {
  if (!(far_target > 0.0 && far_target < 1.0)) throw ConfigError("tar_at_far: target must lie in (0, 1)");
  TarAtFar out;
  out.low_resolution = static_cast<double>(scores.impostor.size()) < 1.0 / far_target;
  for (const RocPoint& p : roc(scores)) {
    if (p.far <= far_target) {
      out.tar = p.tar;
      out.far = p.far;
      out.threshold = p.threshold;
      return out;
    }
  }
  return out;
}

// Rank-k identification recall for k = 1..max_rank. A probe's rank counts
// every unmasked entry scoring >= its best genuine score (ties pessimistic).
inline std::vector<double> cmc(const SimilarityMatrix& S, std::size_t max_rank) {
  if (max_rank == 0) throw ConfigError("cmc: max_rank must be positive");
  if (S.rows() == 0) throw ProtocolError("cmc: no probes");
  std::vector<std::size_t> hist(max_rank, 0);
  for (std::size_t i = 0; i < S.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t j = 0; j < S.cols(); ++j) {
      if (S.is_masked(i, j) || !S.genuine(i, j)) continue;
      found = true;
      best = std::max(best, S.scores(i, j));
    }
    if (!found) {
      throw ProtocolError("cmc: probe " + std::to_string(i) + " (identity " +
                          std::to_string(S.row_labels[i]) + ") has no genuine gallery entry");
    }
    std::size_t rank = 0;
    for (std::size_t j = 0; j < S.cols(); ++j) {
      if (!S.is_masked(i, j) && S.scores(i, j) >= best) ++rank;
    }
    if (rank <= max_rank) ++hist[rank - 1];
  }
  std::vector<double> out(max_rank);
  std::size_t acc = 0;
  for (std::size_t k = 0; k < max_rank; ++k) {
    acc += hist[k];
    out[k] = static_cast<double>(acc) / static_cast<double>(S.rows());
  }
  return out;
}

inline ScoreReport score_report(const SimilarityMatrix& S, const std::vector<double>& fars,
                                std::size_t max_rank) {
  ScoreReport r;
  const ScoreSet set = genuine_impostor_split(S);
  r.genuine_count = set.genuine.size();
  r.impostor_count = set.impostor.size();
  r.roc = roc(set);
  r.eer = eer(set);
  for (double f : fars) r.tar_at_far[f] = tar_at_far(set, f);
  r.cmc = cmc(S, max_rank);
  return r;
}

}  // namespace ridgematch
