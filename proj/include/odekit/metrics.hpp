#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace odekit::metrics {

// Mann-Whitney statistic: P(score+ > score-) + 0.5 P(tie), computed by
// rank sums with average tie ranks. Needs both classes present.
double compute_auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ThresholdMetrics {
  double f1 = 0.0;
  double accuracy = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

enum class ThresholdPolicy { optimal_f1, fixed_half };

// optimal_f1 sweeps every distinct score as "predict positive if score >=
// threshold" and returns the F1-maximizing point with its accuracy/recall.
ThresholdMetrics compute_f1_acc_recall(const std::vector<double>& scores,
                                       const std::vector<int>& labels, ThresholdPolicy policy);

struct MetricsReport {
  double auroc = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double recall = 0.0;
  double gji = 0.0;
  double cosine_similarity = 0.0;
  long nfe = 0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

// Mean cosine similarity over (prediction row, truth row) node pairs;
// rows where either side has zero norm are skipped.
double mean_row_cosine(const std::vector<double>& pred, const std::vector<double>& truth,
                       int rows, int cols);

}  // namespace odekit::metrics
