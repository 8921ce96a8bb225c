#include "odekit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "odekit/common.hpp"

namespace odekit::metrics {

namespace {
constexpr const char* kModule = "training_eval";

void require_both_classes(const std::vector<double>& scores, const std::vector<int>& labels,
                          const char* op) {
  check(scores.size() == labels.size() && !scores.empty(), kModule, op,
        "scores and labels must be non-empty and aligned");
  size_t pos = 0;
  for (int l : labels) {
    check(l == 0 || l == 1, kModule, op, "labels must be 0 or 1");
    pos += static_cast<size_t>(l);
  }
  check(pos > 0 && pos < labels.size(), kModule, op,
        "need at least one positive and one negative label");
}

}  // namespace

double compute_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require_both_classes(scores, labels, "compute_auroc");
  const size_t n = scores.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups.
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }

  double rank_sum_pos = 0.0;
  size_t pos = 0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      rank_sum_pos += rank[k];
      ++pos;
    }
  }
  const size_t neg = n - pos;
  const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

ThresholdMetrics compute_f1_acc_recall(const std::vector<double>& scores,
                                       const std::vector<int>& labels, ThresholdPolicy policy) {
  require_both_classes(scores, labels, "compute_f1_acc_recall");

  auto eval_at = [&](double threshold) {
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t k = 0; k < scores.size(); ++k) {
      const bool pred = scores[k] >= threshold;
      if (pred && labels[k] == 1) ++tp;
      else if (pred && labels[k] == 0) ++fp;
      else if (!pred && labels[k] == 0) ++tn;
      else ++fn;
    }
    ThresholdMetrics m;
    m.threshold = threshold;
    const double denom = 2.0 * tp + fp + fn;
    m.f1 = denom > 0.0 ? 2.0 * tp / denom : 0.0;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    return m;
  };

  if (policy == ThresholdPolicy::fixed_half) return eval_at(0.5);

  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  ThresholdMetrics best;
  best.f1 = -1.0;
  for (double t : distinct) {
    ThresholdMetrics m = eval_at(t);
    if (m.f1 > best.f1) best = m;
  }
  return best;
}

double mean_row_cosine(const std::vector<double>& pred, const std::vector<double>& truth,
                       int rows, int cols) {
  check(pred.size() == truth.size() &&
            pred.size() == static_cast<size_t>(rows) * static_cast<size_t>(cols),
        kModule, "evaluate_graph_forecast", "row-cosine inputs misaligned");
  double acc = 0.0;
  int used = 0;
  for (int i = 0; i < rows; ++i) {
    const double* a = pred.data() + static_cast<size_t>(i) * cols;
    const double* b = truth.data() + static_cast<size_t>(i) * cols;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < cols; ++j) {
      dot += a[j] * b[j];
      na += a[j] * a[j];
      nb += b[j] * b[j];
    }
    if (na <= 0.0 || nb <= 0.0) continue;  // undefined rows skipped
    acc += dot / std::sqrt(na * nb);
    ++used;
  }
  return used > 0 ? acc / used : 0.0;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"auroc", auroc},
          {"f1", f1},
          {"accuracy", accuracy},
          {"recall", recall},
          {"gji", gji},
          {"cosine_similarity", cosine_similarity},
          {"nfe", nfe},
          {"wall_seconds", wall_seconds}};
}

}  // namespace odekit::metrics
