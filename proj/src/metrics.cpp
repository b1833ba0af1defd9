#include "semmap/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "semmap/errors.hpp"

namespace semmap {

ConfusionMatrix::ConfusionMatrix(int label_count) {
  if (label_count < 0 || label_count > kUnlabeled) throw ShapeError("label count must lie in [0, 255]");
  counts_.setZero(label_count, label_count);
}

void ConfusionMatrix::add(std::uint8_t truth, std::uint8_t prediction) {
  if (truth == kUnlabeled || prediction == kUnlabeled) {
    ++ignored_;
    return;
  }
  if (truth >= label_count() || prediction >= label_count()) throw ShapeError("label id beyond the label count");
  ++counts_(truth, prediction);
}

void ConfusionMatrix::accumulate(const LabelImage& truth, const LabelImage& prediction) {
  if (!truth.same_shape(prediction)) throw ShapeError("truth and prediction differ in size");
  for (std::size_t p = 0; p < truth.pixel_count(); ++p) add(truth[p], prediction[p]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.label_count() != label_count()) throw ShapeError("cannot merge matrices of different label counts");
  counts_ += other.counts_;
  ignored_ += other.ignored_;
}

MetricsSummary summarize(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw EmptyEvalError("no pixels were counted");
  const int n = cm.label_count();
  MetricsSummary s;
  s.classes.resize(n);
  s.counted = total;
  s.ignored = cm.ignored();
  std::uint64_t trace = 0;
  int present = 0;
  for (int l = 0; l < n; ++l) {
    const std::uint64_t tp = cm.count(l, l);
    const std::uint64_t row = cm.counts().row(l).sum();
    const std::uint64_t col = cm.counts().col(l).sum();
    ClassMetrics& c = s.classes[l];
    trace += tp;
    c.truth_pixels = row;
    c.present = row > 0;
    c.acc_precision = col > 0 ? static_cast<double>(tp) / col : 0.0;
    if (!c.present) continue;
    c.acc_recall = static_cast<double>(tp) / row;
    c.iou = static_cast<double>(tp) / static_cast<double>(row + col - tp);
    ++present;
    s.mean_acc_recall += c.acc_recall;
    s.mean_acc_precision += c.acc_precision;
    s.mean_iou += c.iou;
    s.fw_iou += c.iou * static_cast<double>(row) / static_cast<double>(total);
  }
  s.mean_acc_recall /= present;
  s.mean_acc_precision /= present;
  s.mean_iou /= present;
  s.global_acc = static_cast<double>(trace) / static_cast<double>(total);
  return s;
}

namespace {
std::string class_name(const std::vector<std::string>& names, int l) {
  return l < static_cast<int>(names.size()) ? names[l] : "class" + std::to_string(l);
}
}  // namespace

std::string format_table(const MetricsSummary& s, const std::vector<std::string>& names) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %12s\n", "class", "acc_recall", "acc_prec", "iou", "truth_px");
  out << line;
  for (int l = 0; l < static_cast<int>(s.classes.size()); ++l) {
    const ClassMetrics& c = s.classes[l];
    if (c.present)
      std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.4f %12llu\n", class_name(names, l).c_str(),
                    c.acc_recall, c.acc_precision, c.iou, static_cast<unsigned long long>(c.truth_pixels));
    else
      std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %12s\n", class_name(names, l).c_str(), "-", "-", "-",
                    "not-present");
    out << line;
  }
  std::snprintf(line, sizeof line,
                "mean acc_recall %.4f  mean acc_precision %.4f  mean IoU %.4f  F.W. IoU %.4f  global %.4f\n",
                s.mean_acc_recall, s.mean_acc_precision, s.mean_iou, s.fw_iou, s.global_acc);
  out << line;
  std::snprintf(line, sizeof line, "counted %llu  ignored %llu\n", static_cast<unsigned long long>(s.counted),
                static_cast<unsigned long long>(s.ignored));
  out << line;
  return out.str();
}

std::string format_csv(const MetricsSummary& s, const std::vector<std::string>& names) {
  std::ostringstream out;
  out.precision(10);
  out << "class,present,truth_pixels,acc_recall,acc_precision,iou\n";
  for (int l = 0; l < static_cast<int>(s.classes.size()); ++l) {
    const ClassMetrics& c = s.classes[l];
    out << class_name(names, l) << ',' << (c.present ? 1 : 0) << ',' << c.truth_pixels << ',';
    if (c.present)
      out << c.acc_recall << ',' << c.acc_precision << ',' << c.iou << '\n';
    else
      out << ",,\n";
  }
  out << "summary,mean_acc_recall,mean_acc_precision,mean_iou,fw_iou,global_acc\n";
  out << "summary," << s.mean_acc_recall << ',' << s.mean_acc_precision << ',' << s.mean_iou << ',' << s.fw_iou << ','
      << s.global_acc << '\n';
  return out.str();
}

}  // namespace semmap
