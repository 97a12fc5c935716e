#include "dcvit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dcvit/error.hpp"
#include "dcvit/ops.hpp"

namespace dcvit {

namespace {

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string gray(double v) {
  const int c = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  return "rgb(" + std::to_string(c) + "," + std::to_string(c) + "," + std::to_string(c) + ")";
}

void svg_open(std::ostringstream& os, double w, double h, const std::string& title) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt(w) << "\" height=\""
     << fmt(h) << "\" viewBox=\"0 0 " << fmt(w) << ' ' << fmt(h) << "\">\n"
     << "<title>" << title << "</title>\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Classification diagnostics

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k; ++i) s += at(i, predicted);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (std::uint64_t c : counts) s += c;
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> true_ids,
                                 std::span<const std::uint32_t> pred_ids, std::size_t k) {
  if (true_ids.size() != pred_ids.size()) throw ShapeError("confusion_matrix: length mismatch");
  if (k == 0) throw ConfigError("confusion_matrix: k must be positive");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(k * k, 0);
  for (std::size_t i = 0; i < true_ids.size(); ++i) {
    if (true_ids[i] >= k || pred_ids[i] >= k) {
      throw DataError("confusion_matrix: class id out of range at index " + std::to_string(i));
    }
    ++cm.counts[true_ids[i] * k + pred_ids[i]];
  }
  return cm;
}

ClassReport class_report(const ConfusionMatrix& cm) {
  if (cm.k < 2) throw ConfigError("class_report: need at least 2 classes");
  ClassReport r;
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < cm.k; ++c) {
    ClassMetrics m;
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t col = cm.col_sum(c);
    const std::uint64_t row = cm.row_sum(c);
    correct += tp;
    m.support = row;
    m.precision_defined = col > 0;
    m.recall_defined = row > 0;
    m.precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.classes.push_back(m);
  }
  const std::uint64_t n = cm.total();
  r.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return r;
}

std::string ClassReport::to_text() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%8s %10s %10s %10s %10s\n", "class", "precision", "recall",
                "f1-score", "support");
  os << line;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const ClassMetrics& m = classes[c];
    std::snprintf(line, sizeof line, "%8zu %10.2f %10.2f %10.2f %10llu%s\n", c, m.precision,
                  m.recall, m.f1, static_cast<unsigned long long>(m.support),
                  m.recall_defined && m.precision_defined ? "" : "  (undefined -> 0)");
    os << line;
  }
  std::snprintf(line, sizeof line, "%8s %32.2f\n", "accuracy", accuracy);
  os << line;
  return os.str();
}

std::string ClassReport::to_csv() const {
  std::ostringstream os;
  os << "class,precision,recall,f1,support,precision_defined,recall_defined\n";
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const ClassMetrics& m = classes[c];
    os << c << ',' << fmt(m.precision, 17) << ',' << fmt(m.recall, 17) << ',' << fmt(m.f1, 17)
       << ',' << m.support << ',' << m.precision_defined << ',' << m.recall_defined << '\n';
  }
  return os.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t j = 0; j < cm.k; ++j) os << ',' << j;
  os << '\n';
  for (std::size_t i = 0; i < cm.k; ++i) {
    os << i;
    for (std::size_t j = 0; j < cm.k; ++j) os << ',' << cm.at(i, j);
    os << '\n';
  }
  return os.str();
}

std::string confusion_svg(const ConfusionMatrix& cm) {
  const double cell = 24.0;
  const double margin = 40.0;
  const double size = margin + cell * static_cast<double>(cm.k);
  std::uint64_t peak = 1;
  for (std::uint64_t c : cm.counts) peak = std::max(peak, c);
  std::ostringstream os;
  svg_open(os, size, size, "Confusion matrix (rows: true, columns: predicted)");
  for (std::size_t i = 0; i < cm.k; ++i) {
    for (std::size_t j = 0; j < cm.k; ++j) {
      const double v = static_cast<double>(cm.at(i, j)) / static_cast<double>(peak);
      os << "<rect x=\"" << fmt(margin + cell * j) << "\" y=\"" << fmt(margin + cell * i)
         << "\" width=\"" << fmt(cell) << "\" height=\"" << fmt(cell) << "\" fill=\""
         << gray(1.0 - v) << "\"/>\n";
    }
    os << "<text x=\"4\" y=\"" << fmt(margin + cell * i + cell * 0.7) << "\" font-size=\"10\">" << i
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Regression diagnostics

ScatterResult error_scatter(std::span<const Point2> predictions, std::span<const Point2> labels,
                            const ScatterOptions& o) {
  if (predictions.size() != labels.size()) throw ShapeError("error_scatter: length mismatch");
  if (!(o.px_per_mm > 0.0)) throw ConfigError("error_scatter: px_per_mm must be positive");
  ScatterResult r;
  std::ostringstream csv;
  csv << "x,y,distance_mm,flag\n";
  std::ostringstream lines, markers;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double d_mm = std::sqrt(squared_distance(predictions[i], labels[i])) / o.px_per_mm;
    const bool ok = d_mm <= o.threshold_mm;
    r.within.push_back(ok);
    ok ? ++r.blue : ++r.red;
    const char* color = ok ? "blue" : "red";
    csv << fmt(labels[i].x, 9) << ',' << fmt(labels[i].y, 9) << ',' << fmt(d_mm, 17) << ','
        << color << '\n';
    lines << "<line x1=\"" << fmt(predictions[i].x, 9) << "\" y1=\"" << fmt(predictions[i].y, 9)
          << "\" x2=\"" << fmt(labels[i].x, 9) << "\" y2=\"" << fmt(labels[i].y, 9) << "\" stroke=\""
          << color << "\" stroke-opacity=\"0.15\" stroke-width=\"1\"/>\n";
    markers << "<circle cx=\"" << fmt(labels[i].x, 9) << "\" cy=\"" << fmt(labels[i].y, 9)
            << "\" r=\"4\" fill=\"" << color << "\"/>\n";
  }
  std::ostringstream svg;
  svg_open(svg, o.screen_w, o.screen_h,
           "Test error: within " + fmt(o.threshold_mm) + " mm (blue), above (red)");
  svg << "<rect x=\"0\" y=\"0\" width=\"" << fmt(o.screen_w) << "\" height=\"" << fmt(o.screen_h)
      << "\" fill=\"white\" stroke=\"black\"/>\n"
      << "<g>\n" << lines.str() << "</g>\n<g>\n" << markers.str() << "</g>\n</svg>\n";
  r.svg = svg.str();
  r.csv = csv.str();
  return r;
}

HeatmapResult eeg_heatmap(std::span<const float> sample, std::size_t channels,
                          std::size_t timesteps) {
  if (sample.size() != channels * timesteps || sample.empty()) {
    throw ShapeError("eeg_heatmap: sample size does not match channels x timesteps");
  }
  for (float v : sample) {
    if (!std::isfinite(v)) throw NumericError("eeg_heatmap: non-finite sample value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(sample.begin(), sample.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  HeatmapResult r;
  r.normalized.resize(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i)
    r.normalized[i] = hi > lo ? (static_cast<double>(sample[i]) - lo) / (hi - lo) : 0.5;

  const double cw = 2.0, ch = 4.0;
  std::ostringstream svg, csv;
  svg_open(svg, cw * static_cast<double>(timesteps), ch * static_cast<double>(channels),
           "EEG sample heat map (rows: channels, columns: time)");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < timesteps; ++t) {
      const double v = r.normalized[c * timesteps + t];
      svg << "<rect x=\"" << fmt(cw * t) << "\" y=\"" << fmt(ch * c) << "\" width=\"" << fmt(cw)
          << "\" height=\"" << fmt(ch) << "\" fill=\"" << gray(v) << "\"/>\n";
      csv << (t ? "," : "") << fmt(v, 17);
    }
    csv << '\n';
  }
  svg << "</svg>\n";
  r.svg = svg.str();
  std::ostringstream header;
  for (std::size_t t = 0; t < timesteps; ++t) header << (t ? "," : "") << 't' << t;
  header << '\n';
  r.csv = header.str() + csv.str();
  return r;
}

std::vector<Selection> high_confidence_select(const Tensor& logits, double threshold) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    throw ShapeError("high_confidence_select: logits must be [n, k] with k >= 2");
  }
  NoGradGuard no_grad;
  const Tensor probs = softmax(logits, 1);
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  auto p = probs.data();
  std::vector<Selection> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = p.subspan(i * k, k);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (row[best] >= threshold) out.push_back({i, best, row[best]});
  }
  return out;
}

}  // namespace dcvit
