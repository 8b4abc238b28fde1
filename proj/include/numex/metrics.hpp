#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "numex/dataset.hpp"

namespace numex {

inline constexpr double kDiceEpsilon = 1e-5;

/// Soft dice of one instance plus its per-class terms.
struct DiceResult {
  double dice = 0.0;
  std::array<double, kNumClasses> per_class{};
};

/// Multi-class soft dice between row-normalized probabilities p (T x 3) and
/// one-hot targets t (T x 3):
///   (1/3) * sum_c (2*sum_i p_ic*t_ic + eps) / (sum_i p_ic^2 + sum_i t_ic^2 + eps)
/// eps keeps absent classes defined (their term evaluates to 1).
DiceResult soft_dice(const Eigen::MatrixXd& p, const Eigen::MatrixXd& t,
                     double eps = kDiceEpsilon);

/// One-hot rows from integer labels.
Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes = kNumClasses);

/// Fraction of positions where argmax(p) equals the label; argmax ties
/// break toward the lowest class index. Padding positions count.
double accuracy(const Eigen::MatrixXd& p, const std::vector<int>& labels);

struct EvalReport {
  double dice = 0.0;
  double accuracy = 0.0;
  std::array<double, kNumClasses> per_class_dice{};
  std::size_t n_instances = 0;
  bool pooled = false;
};

std::string to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

/// Fixed single-line summary for scripting.
std::string summary_line(const EvalReport& report);

/// Mean-of-instances (default) or pooled-sums evaluation of per-instance
/// probability predictions against instance labels. Both vectors must be
/// parallel and non-empty (EmptyEvalSet otherwise).
EvalReport aggregate_eval(const std::vector<Eigen::MatrixXd>& probabilities,
                          const std::vector<const std::vector<int>*>& labels, bool pooled = false,
                          double eps = kDiceEpsilon);

template <class S>
struct TaggerModel;

/// Runs the model over every instance (inference mode) and aggregates.
template <class S>
EvalReport evaluate(const TaggerModel<S>& model, const std::vector<TrainingInstance>& instances,
                    bool pooled = false, double eps = kDiceEpsilon);

}  // namespace numex
