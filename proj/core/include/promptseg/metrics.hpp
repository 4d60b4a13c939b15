#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::metrics {

// Logistic squashing applied once at the metrics boundary.
MatrixD sigmoid(const MatrixD& logits);

// 1 where probability >= t. Throws InputError unless 0 < t < 1.
Mask binarize(const MatrixD& probabilities, double t);

// Both-empty masks score 1. Throw InputError for shape mismatches.
double iou_fg(const Mask& pred, const Mask& gt);
// Mean of foreground and background IoU.
double iou_bin(const Mask& pred, const Mask& gt);
double miou(const std::vector<double>& per_class_iou);

// n evenly spaced points i / (n + 1), i = 1..n.
std::vector<double> uniform_grid(std::size_t n = 256);

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const { return tp + fp + fn + tn; }
  double iou_fg() const;
  double iou_bin() const;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

enum class SweepMetric { MeanIoU, IoUFG, IoUBin };
std::string to_string(SweepMetric m);

// Per-threshold confusion counts pooled over every pixel seen, plus running
// per-image IoU sums for image-averaged metrics. Memory is O(thresholds).
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<double> thresholds = uniform_grid());

  void accumulate(const MatrixD& probabilities, const Mask& gt);
  // Throws ConfigError when the threshold grids differ.
  void merge(const MetricAccumulator& other);
  static MetricAccumulator merged(MetricAccumulator a, const MetricAccumulator& b);

  const std::vector<double>& thresholds() const { return thresholds_; }
  const std::vector<Confusion>& counts() const { return counts_; }
  std::uint64_t n_images() const { return n_images_; }
  std::uint64_t n_pixels() const { return n_pixels_; }
  std::uint64_t n_positive_pixels() const { return positives_; }

  // Area under the pooled precision-recall curve by composite Simpson
  // integration over recall; 0 when no positive pixel was seen.
  double average_precision() const;

  std::size_t index_of(double t) const;  // nearest grid point
  double metric_at(SweepMetric metric, std::size_t index) const;
  // argmax over the grid; ties resolve to the smallest threshold.
  double best_threshold(SweepMetric metric = SweepMetric::MeanIoU) const;

  // threshold, tp, fp, fn, tn, precision, recall, iou_fg, iou_bin, miou
  void write_sweep_csv(std::ostream& out) const;

 private:
  std::vector<double> thresholds_;
  std::vector<Confusion> counts_;
  std::vector<double> image_iou_fg_sum_;
  std::vector<double> image_iou_bin_sum_;
  std::uint64_t n_images_ = 0;
  std::uint64_t n_pixels_ = 0;
  std::uint64_t positives_ = 0;
};

// {metric: value, threshold: t, n_images, n_pixels}
nlohmann::json metric_report(const std::string& metric, double value, double threshold, std::uint64_t n_images,
                             std::uint64_t n_pixels);

// Composite Simpson over possibly uneven abscissae; a trailing odd interval
// and strongly lopsided interval pairs use the trapezoid rule.
double simpson_integrate(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace promptseg::metrics
