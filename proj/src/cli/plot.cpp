#include "clb/cli/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "clb/core/errors.hpp"
#include "clb/data/image_dir.hpp"
#include "clb/protocol/experiment.hpp"

namespace clb {

namespace fs = std::filesystem;

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
                                    "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#843c39"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Axes for steps 1..n against accuracy [0, 1], legend on the right.
class Chart {
 public:
  Chart(std::string title, std::size_t steps, std::size_t legend_rows)
      : title_(std::move(title)), steps_(std::max<std::size_t>(steps, 1)) {
    height_ = std::max(kTop + kPlotH + kBottom, kTop + 20 * legend_rows + 20);
  }

  double x(double step) const {
    if (steps_ == 1) return kLeft + kPlotW / 2.0;
    return kLeft + (step - 1.0) / static_cast<double>(steps_ - 1) * kPlotW;
  }
  double y(double acc) const { return kTop + (1.0 - acc) * kPlotH; }

  void line(const std::vector<std::pair<double, double>>& pts, std::size_t colour, const std::string& label) {
    const std::string col = kPalette[colour % kPaletteSize];
    std::string d;
    for (const auto& [s, a] : pts) d += (d.empty() ? "" : " ") + num(x(s)) + "," + num(y(a));
    body_ << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"" << d << "\"/>\n";
    for (const auto& [s, a] : pts) {
      body_ << "<circle cx=\"" << num(x(s)) << "\" cy=\"" << num(y(a)) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    }
    const double ly = kTop + 10 + 20.0 * static_cast<double>(legend_++);
    const double lx = kLeft + kPlotW + 20;
    body_ << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 18) << "\" y2=\"" << num(ly)
          << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << num(lx + 24) << "\" y=\"" << num(ly + 4) << "\">" << escape(label) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream out;
    const double width = kLeft + kPlotW + kLegendW;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height_)
        << "\" viewBox=\"0 0 " << num(width) << " " << num(height_) << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << num(kLeft + kPlotW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << escape(title_) << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double a = t / 4.0;
      out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(y(a)) << "\" x2=\"" << num(kLeft + kPlotW) << "\" y2=\""
          << num(y(a)) << "\" stroke=\"#dddddd\"/>\n"
          << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y(a) + 4) << "\" text-anchor=\"end\">" << num(a)
          << "</text>\n";
    }
    for (std::size_t s = 1; s <= steps_; ++s) {
      out << "<text x=\"" << num(x(static_cast<double>(s))) << "\" y=\"" << num(kTop + kPlotH + 18)
          << "\" text-anchor=\"middle\">" << s << "</text>\n";
    }
    out << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kPlotW) << "\" height=\""
        << num(kPlotH) << "\" fill=\"none\" stroke=\"black\"/>\n"
        << "<text x=\"" << num(kLeft + kPlotW / 2) << "\" y=\"" << num(kTop + kPlotH + 38)
        << "\" text-anchor=\"middle\">training step (unit)</text>\n"
        << "<text transform=\"translate(18," << num(kTop + kPlotH / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << "test accuracy</text>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  static constexpr double kLeft = 60, kTop = 40, kPlotW = 480, kPlotH = 300, kBottom = 55, kLegendW = 210;
  std::string title_;
  std::size_t steps_;
  double height_;
  std::size_t legend_ = 0;
  std::ostringstream body_;
};

}  // namespace

std::string unit_curves_svg(const std::string& title, const AccuracyMatrix& m) {
  Chart chart(title, m.size(), m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = j; i < m.size(); ++i) pts.emplace_back(static_cast<double>(i + 1), m.at(i, j));
    chart.line(pts, j, "unit " + std::to_string(j + 1));
  }
  return chart.str();
}

std::string summary_svg(const std::string& title, const std::vector<AccSeries>& series) {
  std::size_t steps = 1;
  for (const auto& s : series) steps = std::max(steps, s.acc.size());
  Chart chart(title, steps, series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < series[k].acc.size(); ++i) pts.emplace_back(static_cast<double>(i + 1), series[k].acc[i]);
    chart.line(pts, k, series[k].label);
  }
  return chart.str();
}

std::vector<fs::path> write_plots(const fs::path& dir) {
  const fs::path mdir = dir / "matrices";
  if (!fs::is_directory(mdir)) throw DataError("no matrices directory under " + dir.string());

  auto read_json = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(p.string() + ": " + e.what());
    }
  };

  if (fs::exists(dir / "manifest.json")) {
    const auto manifest = read_json(dir / "manifest.json");
    for (const auto& run : manifest.value("runs", nlohmann::json::array())) {
      if (run.value("status", "") != "ok") continue;
      const fs::path p = dir / run.at("matrix").get<std::string>();
      if (!fs::exists(p)) throw DataError("missing matrix file " + p.string());
    }
  }

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(mdir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no matrix files in " + mdir.string());

  struct Group {
    std::size_t units = 0;
    std::vector<double> sum;
    std::size_t count = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Group> groups;
  for (const auto& f : files) {
    const auto j = read_json(f);
    RunResult r;
    std::string key;
    try {
      r = result_from_json(j);
      key = j.at("meta").at("method").get<std::string>() + "_" + j.at("meta").at("scenario").get<std::string>();
    } catch (const std::exception& e) {
      throw DataError(f.string() + ": not a matrix file: " + e.what());
    }
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    auto& g = it->second;
    if (g.count == 0) {
      g.units = r.matrix.size();
      g.sum.assign(r.matrix.packed().size(), 0.0);
    } else if (g.units != r.matrix.size()) {
      throw DataError(f.string() + ": " + std::to_string(r.matrix.size()) + " units, other " + key + " runs have " +
                      std::to_string(g.units));
    }
    for (std::size_t i = 0; i < g.sum.size(); ++i) g.sum[i] += r.matrix.packed()[i];
    ++g.count;
  }

  const fs::path out = dir / "plots";
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
  std::vector<fs::path> written;
  std::vector<AccSeries> series;
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> mean(g.sum.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = std::clamp(g.sum[i] / static_cast<double>(g.count), 0.0, 1.0);
    }
    const auto m = AccuracyMatrix::from_packed(g.units, mean);
    std::string title = key;
    std::replace(title.begin(), title.end(), '_', ' ');
    title += " (" + std::to_string(g.count) + " run" + (g.count == 1 ? "" : "s") + ")";
    const fs::path p = out / (key + ".svg");
    std::ofstream(p, std::ios::binary | std::ios::trunc) << unit_curves_svg(title, m);
    written.push_back(p);
    std::string label = key;
    std::replace(label.begin(), label.end(), '_', ' ');
    series.push_back({label, acc_series(m)});
  }
  const fs::path p = out / "summary.svg";
  std::ofstream(p, std::ios::binary | std::ios::trunc) << summary_svg("step-wise Acc", series);
  written.push_back(p);
  return written;
}

}  // namespace clb
