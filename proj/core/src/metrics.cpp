#include "promptseg/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "promptseg/error.hpp"

namespace promptseg::metrics {

MatrixD sigmoid(const MatrixD& logits) {
  return logits.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Mask binarize(const MatrixD& p, double t) {
  if (!(t > 0.0 && t < 1.0)) throw InputError("threshold must lie in (0, 1)");
  Mask m(static_cast<int>(p.cols()), static_cast<int>(p.rows()), 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) m.at(y, x) = p(y, x) >= t ? 1 : 0;
  return m;
}

namespace {

void require_same_shape(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw InputError("prediction and ground truth sizes differ");
}

double ratio_or_one(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double iou_fg(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    inter += pred.bits[i] & gt.bits[i];
    uni += pred.bits[i] | gt.bits[i];
  }
  return ratio_or_one(inter, uni);
}

double iou_bin(const Mask& pred, const Mask& gt) {
  return 0.5 * (iou_fg(pred, gt) + iou_fg(mask_complement(pred), mask_complement(gt)));
}

double miou(const std::vector<double>& v) {
  if (v.empty()) throw InputError("miou over an empty class list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> uniform_grid(std::size_t n) {
  if (n == 0) throw InputError("threshold grid must be nonempty");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
  return g;
}

double Confusion::iou_fg() const { return ratio_or_one(tp, tp + fp + fn); }

double Confusion::iou_bin() const { return 0.5 * (iou_fg() + ratio_or_one(tn, tn + fp + fn)); }

std::string to_string(SweepMetric m) {
  switch (m) {
    case SweepMetric::MeanIoU: return "mIoU";
    case SweepMetric::IoUFG: return "IoU_FG";
    case SweepMetric::IoUBin: return "IoU_BIN";
  }
  return "?";
}

MetricAccumulator::MetricAccumulator(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {
  if (thresholds_.empty()) throw ConfigError("threshold grid must be nonempty");
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    if (!(thresholds_[i] > 0.0 && thresholds_[i] < 1.0) || (i > 0 && thresholds_[i] <= thresholds_[i - 1])) {
      throw ConfigError("thresholds must be strictly ascending inside (0, 1)");
    }
  }
  counts_.assign(thresholds_.size(), {});
  image_iou_fg_sum_.assign(thresholds_.size(), 0.0);
  image_iou_bin_sum_.assign(thresholds_.size(), 0.0);
}

void MetricAccumulator::accumulate(const MatrixD& p, const Mask& gt) {
  if (p.rows() != gt.height || p.cols() != gt.width) throw InputError("probability map and mask sizes differ");
  const std::size_t n = thresholds_.size();
  // bin k holds pixels with exactly k thresholds <= p
  std::vector<std::uint64_t> pos(n + 1, 0), neg(n + 1, 0);
  const double* t = thresholds_.data();
  const std::size_t top = std::bit_floor(n);
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      const double v = p(y, x);
      std::size_t k = 0;
      for (std::size_t step = top; step > 0; step >>= 1) {
        const bool up = k + step <= n && t[k + step - 1] <= v;
        k += up ? step : 0;
      }
      (gt.at(y, x) ? pos : neg)[k]++;
    }
  std::uint64_t total_pos = 0, total_neg = 0;
  for (std::size_t k = 0; k <= n; ++k) {
    total_pos += pos[k];
    total_neg += neg[k];
  }
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t j = n; j-- > 0;) {
    tp += pos[j + 1];
    fp += neg[j + 1];
    const Confusion c{tp, fp, total_pos - tp, total_neg - fp};
    counts_[j].tp += c.tp;
    counts_[j].fp += c.fp;
    counts_[j].fn += c.fn;
    counts_[j].tn += c.tn;
    image_iou_fg_sum_[j] += c.iou_fg();
    image_iou_bin_sum_[j] += c.iou_bin();
  }
  ++n_images_;
  n_pixels_ += total_pos + total_neg;
  positives_ += total_pos;
}

void MetricAccumulator::merge(const MetricAccumulator& o) {
  if (o.thresholds_ != thresholds_) throw ConfigError("cannot merge accumulators with different threshold grids");
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    counts_[j].tp += o.counts_[j].tp;
    counts_[j].fp += o.counts_[j].fp;
    counts_[j].fn += o.counts_[j].fn;
    counts_[j].tn += o.counts_[j].tn;
    image_iou_fg_sum_[j] += o.image_iou_fg_sum_[j];
    image_iou_bin_sum_[j] += o.image_iou_bin_sum_[j];
  }
  n_images_ += o.n_images_;
  n_pixels_ += o.n_pixels_;
  positives_ += o.positives_;
}

MetricAccumulator MetricAccumulator::merged(MetricAccumulator a, const MetricAccumulator& b) {
  a.merge(b);
  return a;
}

double simpson_integrate(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InputError("simpson_integrate: length mismatch");
  constexpr double kMaxSkew = 4.0;
  double area = 0.0;
  std::size_t i = 0;
  while (i + 2 < x.size()) {
    const double h0 = x[i + 1] - x[i], h1 = x[i + 2] - x[i + 1];
    if (h0 > 0 && h1 > 0 && h1 / h0 <= kMaxSkew && h0 / h1 <= kMaxSkew) {
      const double s = h0 + h1;
      area += s / 6.0 * ((2.0 - h1 / h0) * y[i] + s * s / (h0 * h1) * y[i + 1] + (2.0 - h0 / h1) * y[i + 2]);
      i += 2;
    } else {
      area += 0.5 * h0 * (y[i] + y[i + 1]);
      i += 1;
    }
  }
  if (i + 1 < x.size()) area += 0.5 * (x[i + 1] - x[i]) * (y[i] + y[i + 1]);
  return area;
}

double MetricAccumulator::average_precision() const {
  if (positives_ == 0) return 0.0;
  const double P = static_cast<double>(positives_);
  // Points by descending threshold, i.e. ascending recall. Threshold 0
  // (everything positive) closes the curve at recall 1.
  std::vector<double> recall, precision;
  auto add = [&](std::uint64_t tp, std::uint64_t fp) {
    if (tp + fp == 0) return;
    const double r = static_cast<double>(tp) / P;
    const double pr = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (!recall.empty() && r == recall.back()) return;  // keep the highest threshold per recall
    recall.push_back(r);
    precision.push_back(pr);
  };
  for (std::size_t j = counts_.size(); j-- > 0;) add(counts_[j].tp, counts_[j].fp);
  add(positives_, n_pixels_ - positives_);
  if (recall.empty()) return 0.0;
  if (recall.front() > 0.0) {
    recall.insert(recall.begin(), 0.0);
    precision.insert(precision.begin(), precision.front());
  }
  return std::clamp(simpson_integrate(recall, precision), 0.0, 1.0);
}

std::size_t MetricAccumulator::index_of(double t) const {
  std::size_t best = 0;
  for (std::size_t j = 1; j < thresholds_.size(); ++j) {
    if (std::abs(thresholds_[j] - t) < std::abs(thresholds_[best] - t)) best = j;
  }
  return best;
}

double MetricAccumulator::metric_at(SweepMetric metric, std::size_t j) const {
  if (j >= thresholds_.size()) throw InputError("threshold index out of range");
  switch (metric) {
    case SweepMetric::MeanIoU:
      return n_images_ == 0 ? 0.0 : image_iou_fg_sum_[j] / static_cast<double>(n_images_);
    case SweepMetric::IoUFG: return counts_[j].iou_fg();
    case SweepMetric::IoUBin: return counts_[j].iou_bin();
  }
  return 0.0;
}

double MetricAccumulator::best_threshold(SweepMetric metric) const {
  if (n_images_ == 0) throw InputError("best_threshold needs a nonempty validation stream");
  std::size_t best = 0;
  double best_value = metric_at(metric, 0);
  for (std::size_t j = 1; j < thresholds_.size(); ++j) {
    const double v = metric_at(metric, j);
    if (v > best_value) {
      best_value = v;
      best = j;
    }
  }
  return thresholds_[best];
}

void MetricAccumulator::write_sweep_csv(std::ostream& out) const {
  out << "threshold,tp,fp,fn,tn,precision,recall,iou_fg,iou_bin,miou\n";
  out << std::setprecision(10);
  for (std::size_t j = 0; j < thresholds_.size(); ++j) {
    const auto& c = counts_[j];
    out << thresholds_[j] << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn << ','
        << ratio_or_one(c.tp, c.tp + c.fp) << ',' << ratio_or_one(c.tp, c.tp + c.fn) << ',' << c.iou_fg() << ','
        << c.iou_bin() << ',' << metric_at(SweepMetric::MeanIoU, j) << '\n';
  }
}

nlohmann::json metric_report(const std::string& metric, double value, double threshold, std::uint64_t n_images,
                             std::uint64_t n_pixels) {
  return {{"metric", metric}, {"value", value}, {"threshold", threshold}, {"n_images", n_images}, {"n_pixels", n_pixels}};
}

}  // namespace promptseg::metrics
