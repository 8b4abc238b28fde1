#include "numex/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "numex/errors.hpp"

namespace numex {

DiceResult soft_dice(const Eigen::MatrixXd& p, const Eigen::MatrixXd& t, double eps) {
  if (p.rows() != t.rows() || p.cols() != t.cols() || p.cols() != kNumClasses)
    throw ShapeMismatch("soft_dice: p is " + std::to_string(p.rows()) + "x" +
                        std::to_string(p.cols()) + ", t is " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()));

  DiceResult out;
  for (int c = 0; c < kNumClasses; ++c) {
    double inter = 0.0, p_sq = 0.0, t_sq = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      inter += p(i, c) * t(i, c);
      p_sq += p(i, c) * p(i, c);
      t_sq += t(i, c) * t(i, c);
    }
    out.per_class[static_cast<std::size_t>(c)] = (2.0 * inter + eps) / (p_sq + t_sq + eps);
  }
  out.dice = (out.per_class[0] + out.per_class[1] + out.per_class[2]) / 3.0;
  return out;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return t;
}

double accuracy(const Eigen::MatrixXd& p, const std::vector<int>& labels) {
  if (p.rows() != static_cast<Eigen::Index>(labels.size()) || p.cols() != kNumClasses)
    throw ShapeMismatch("accuracy: p is " + std::to_string(p.rows()) + "x" +
                        std::to_string(p.cols()) + " against " + std::to_string(labels.size()) +
                        " labels");
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (p(i, c) > p(i, best)) best = c;  // strict: ties keep the lower index
    if (best == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

EvalReport aggregate_eval(const std::vector<Eigen::MatrixXd>& probabilities,
                          const std::vector<const std::vector<int>*>& labels, bool pooled,
                          double eps) {
  if (probabilities.empty() || probabilities.size() != labels.size())
    throw EmptyEvalSet("no instances to evaluate");

  EvalReport report;
  report.n_instances = probabilities.size();
  report.pooled = pooled;

  if (pooled) {
    std::array<double, kNumClasses> inter{}, p_sq{}, t_sq{};
    double acc_sum = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
      const auto& p = probabilities[k];
      const auto t = one_hot(*labels[k]);
      for (int c = 0; c < kNumClasses; ++c) {
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
          inter[static_cast<std::size_t>(c)] += p(i, c) * t(i, c);
          p_sq[static_cast<std::size_t>(c)] += p(i, c) * p(i, c);
          t_sq[static_cast<std::size_t>(c)] += t(i, c) * t(i, c);
        }
      }
      acc_sum += accuracy(p, *labels[k]);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      report.per_class_dice[c] = (2.0 * inter[c] + eps) / (p_sq[c] + t_sq[c] + eps);
    report.accuracy = acc_sum / static_cast<double>(probabilities.size());
  } else {
    std::array<double, kNumClasses> class_sum{};
    double acc_sum = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
      const DiceResult d = soft_dice(probabilities[k], one_hot(*labels[k]), eps);
      for (std::size_t c = 0; c < kNumClasses; ++c) class_sum[c] += d.per_class[c];
      acc_sum += accuracy(probabilities[k], *labels[k]);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      report.per_class_dice[c] = class_sum[c] / static_cast<double>(probabilities.size());
    report.accuracy = acc_sum / static_cast<double>(probabilities.size());
  }

  report.dice = (report.per_class_dice[0] + report.per_class_dice[1] + report.per_class_dice[2]) / 3.0;
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["dice"] = report.dice;
  j["accuracy"] = report.accuracy;
  j["per_class_dice"] = report.per_class_dice;
  j["n_instances"] = report.n_instances;
  j["pooled"] = report.pooled;
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  j.at("dice").get_to(r.dice);
  j.at("accuracy").get_to(r.accuracy);
  j.at("per_class_dice").get_to(r.per_class_dice);
  j.at("n_instances").get_to(r.n_instances);
  j.at("pooled").get_to(r.pooled);
  return r;
}

std::string summary_line(const EvalReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "dice=" << report.dice << " accuracy=" << report.accuracy
     << " per_class=" << report.per_class_dice[0] << ',' << report.per_class_dice[1] << ','
     << report.per_class_dice[2] << " n=" << report.n_instances;
  return os.str();
}

}  // namespace numex
