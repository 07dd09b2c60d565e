// Copyright 2026 The refgame Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "refgame/checkpoint.hpp"
#include "refgame/experiment.hpp"
#include "refgame/stats.hpp"

namespace refgame {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kBootstrapSeed = 0x5eedc1;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

RunLogRow row_from_values(int step, std::span<const double> v) {
  RunLogRow r;
  r.step = step;
  std::size_t i = 0;
  for (double* p : {&r.mean_reward, &r.mean_penalty, &r.mean_score, &r.bleu,
                    &r.edit_distance_norm, &r.function_word_fraction, &r.mean_sentence_length,
                    &r.mean_word_length, &r.grammatical_error_rate, &r.kl, &r.clip_fraction}) {
    *p = v[i++];
  }
  r.skipped_minibatches = static_cast<int>(std::lround(v[i++]));
  r.summary_tokens = v[i++];
  r.listener_surprisal = v[i++];
  return r;
}

struct GroupKey {
  BottleneckKind kind;
  double lambda;
  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

struct Band {
  std::vector<int> steps;
  std::vector<ConfidenceInterval> ci;
};

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

// One metric, one bottleneck kind, a line plus CI band per lambda.
std::string svg_plot(const std::string& title, const std::vector<std::pair<double, Band>>& series) {
  const double W = 640, H = 400, L = 60, R = 120, T = 40, B = 50;
  double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
  for (const auto& [lambda, band] : series) {
    for (std::size_t i = 0; i < band.steps.size(); ++i) {
      x_min = std::min(x_min, double(band.steps[i]));
      x_max = std::max(x_max, double(band.steps[i]));
      y_min = std::min(y_min, band.ci[i].low);
      y_max = std::max(y_max, band.ci[i].high);
    }
  }
  if (x_min > x_max) x_min = 0, x_max = 1;
  if (y_min > y_max) y_min = 0, y_max = 1;
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_min -= 0.5, y_max += 0.5;
  auto px = [&](double x) { return L + (x - x_min) / (x_max - x_min) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y_min) / (y_max - y_min) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
    << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y_min + (y_max - y_min) * k / 4.0;
    const double xv = x_min + (x_max - x_min) * k / 4.0;
    s << "<text x=\"" << L - 5 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv)
      << "</text>\n";
    s << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
      << std::lround(xv) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\">step</text>\n";
  std::size_t c = 0;
  for (const auto& [lambda, band] : series) {
    const char* color = kPalette[c++ % std::size(kPalette)];
    if (band.steps.empty()) continue;
    s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < band.steps.size(); ++i) {
      s << px(band.steps[i]) << ',' << py(band.ci[i].high) << ' ';
    }
    for (std::size_t i = band.steps.size(); i-- > 0;) {
      s << px(band.steps[i]) << ',' << py(band.ci[i].low) << ' ';
    }
    s << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < band.steps.size(); ++i) {
      s << px(band.steps[i]) << ',' << py(band.ci[i].mean) << ' ';
    }
    s << "\"/>\n";
    const double ly = T + 18.0 * static_cast<double>(c);
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\""
      << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">lambda=" << fmt(lambda)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::vector<std::string> metric_names() {
  const auto& cols = run_log_columns();
  return {cols.begin() + 1, cols.end()};
}

std::vector<double> metric_values(const RunLogRow& r) {
  return {r.mean_reward,
          r.mean_penalty,
          r.mean_score,
          r.bleu,
          r.edit_distance_norm,
          r.function_word_fraction,
          r.mean_sentence_length,
          r.mean_word_length,
          r.grammatical_error_rate,
          r.kl,
          r.clip_fraction,
          static_cast<double>(r.skipped_minibatches),
          r.summary_tokens,
          r.listener_surprisal};
}

int summary_window(std::size_t steps) {
  return std::max(1, std::min(20, static_cast<int>(steps / 5)));
}

RunLogRow window_mean(std::span<const RunLogRow> rows, bool final_window, int window) {
  if (rows.empty()) throw Error("window_mean: empty run log");
  const std::size_t n = std::min(rows.size(), static_cast<std::size_t>(std::max(window, 1)));
  const auto part = final_window ? rows.subspan(rows.size() - n) : rows.subspan(0, n);
  std::vector<double> acc(metric_names().size(), 0.0);
  for (const auto& r : part) {
    const auto v = metric_values(r);
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i] / static_cast<double>(n);
  }
  return row_from_values(part.back().step, acc);
}

std::vector<RunRecord> collect_runs(const fs::path& root) {
  if (!fs::is_directory(root)) throw UsageError("not a directory: " + root.string());
  std::vector<fs::path> logs;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == "run_log.csv") logs.push_back(e.path());
  }
  std::sort(logs.begin(), logs.end());
  std::vector<RunRecord> runs;
  for (const auto& log : logs) {
    const fs::path dir = log.parent_path();
    const fs::path cfg_path = dir / "config.resolved.json";
    if (!fs::exists(cfg_path)) {
      throw Error(dir.string() + ": run_log.csv without config.resolved.json");
    }
    const auto cfg = parse_config(read_file(cfg_path), cfg_path.string());
    RunRecord rec;
    rec.dir = dir;
    rec.kind = cfg.bottleneck.kind;
    rec.lambda = cfg.bottleneck.lambda;
    rec.seed = cfg.ppo.seed;
    try {
      rec.rows = read_run_log(log);
    } catch (const Error& e) {
      throw Error(std::string("mixed or unknown run log schema: ") + e.what() +
                  " (expected columns: " + run_log_header() + ")");
    }
    if (!rec.rows.empty()) runs.push_back(std::move(rec));
  }
  return runs;
}

std::vector<LambdaSummary> summarize_lambdas(std::span<const RunRecord> runs) {
  std::map<GroupKey, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) groups[{r.kind, r.lambda}].push_back(&r);
  std::vector<LambdaSummary> out;
  const std::size_t m = metric_names().size();
  for (const auto& [key, members] : groups) {
    std::vector<double> init(m, 0.0), fin(m, 0.0);
    for (const RunRecord* r : members) {
      const int w = summary_window(r->rows.size());
      const auto a = metric_values(window_mean(r->rows, false, w));
      const auto b = metric_values(window_mean(r->rows, true, w));
      for (std::size_t i = 0; i < m; ++i) {
        init[i] += a[i] / static_cast<double>(members.size());
        fin[i] += b[i] / static_cast<double>(members.size());
      }
    }
    LambdaSummary s;
    s.kind = key.kind;
    s.lambda = key.lambda;
    s.n_runs = static_cast<int>(members.size());
    s.initial = row_from_values(members.front()->rows.front().step, init);
    s.final = row_from_values(members.front()->rows.back().step, fin);
    out.push_back(s);
  }
  return out;
}

double reward_drop_threshold(std::span<const LambdaSummary> summaries, BottleneckKind kind) {
  for (const auto& s : summaries) {  // sorted by lambda within a kind
    if (s.kind == kind && s.final.mean_reward < s.initial.mean_reward) return s.lambda;
  }
  return std::nan("");
}

void cmd_report(const fs::path& runs_root, const fs::path& out) {
  const auto runs = collect_runs(runs_root);
  if (runs.empty()) throw UsageError("no completed runs below " + runs_root.string());
  fs::create_directories(out);
  const auto names = metric_names();

  std::map<GroupKey, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) groups[{r.kind, r.lambda}].push_back(&r);

  // Per-step across-seed mean and bootstrap CI.
  std::map<GroupKey, std::vector<Band>> bands;  // [metric]
  std::ostringstream csv;
  csv << "kind,lambda,step,n_runs";
  for (const auto& n : names) csv << ',' << n << "_mean," << n << "_ci_low," << n << "_ci_high";
  csv << '\n';
  for (const auto& [key, members] : groups) {
    std::map<int, std::vector<std::vector<double>>> by_step;  // step -> runs -> metrics
    for (const RunRecord* r : members) {
      for (const auto& row : r->rows) by_step[row.step].push_back(metric_values(row));
    }
    auto& metric_bands = bands[key];
    metric_bands.resize(names.size());
    for (const auto& [step, samples] : by_step) {
      csv << to_string(key.kind) << ',' << fmt(key.lambda) << ',' << step << ',' << samples.size();
      for (std::size_t m = 0; m < names.size(); ++m) {
        std::vector<double> xs;
        for (const auto& s : samples) xs.push_back(s[m]);
        const auto ci = bootstrap_ci(xs, derive_seed(kBootstrapSeed, static_cast<std::uint64_t>(step), m));
        csv << ',' << fmt(ci.mean) << ',' << fmt(ci.low) << ',' << fmt(ci.high);
        metric_bands[m].steps.push_back(step);
        metric_bands[m].ci.push_back(ci);
      }
      csv << '\n';
    }
  }
  write_file_atomic(out / "aggregate.csv", csv.str());

  const auto summaries = summarize_lambdas(runs);
  std::ostringstream table;
  table << "kind,lambda,n_runs";
  for (const auto& n : names) table << ",initial_" << n << ",final_" << n;
  table << '\n';
  for (const auto& s : summaries) {
    table << to_string(s.kind) << ',' << fmt(s.lambda) << ',' << s.n_runs;
    const auto a = metric_values(s.initial), b = metric_values(s.final);
    for (std::size_t m = 0; m < names.size(); ++m) table << ',' << fmt(a[m]) << ',' << fmt(b[m]);
    table << '\n';
  }
  write_file_atomic(out / "lambda_summary.csv", table.str());

  std::ostringstream thresholds;
  thresholds << "kind,reward_drop_lambda\n";
  std::vector<BottleneckKind> kinds;
  for (const auto& [key, _] : groups) {
    if (std::find(kinds.begin(), kinds.end(), key.kind) == kinds.end()) kinds.push_back(key.kind);
  }
  for (auto k : kinds) {
    const double t = reward_drop_threshold(summaries, k);
    thresholds << to_string(k) << ',' << (std::isnan(t) ? std::string("none") : fmt(t)) << '\n';
  }
  write_file_atomic(out / "thresholds.csv", thresholds.str());

  const fs::path plots = out / "plots";
  fs::create_directories(plots);
  for (auto k : kinds) {
    for (std::size_t m = 0; m < names.size(); ++m) {
      std::vector<std::pair<double, Band>> series;
      for (const auto& [key, metric_bands] : bands) {
        if (key.kind == k) series.emplace_back(key.lambda, metric_bands[m]);
      }
      const std::string name = std::string(to_string(k)) + "_" + names[m];
      write_file_atomic(plots / (name + ".svg"), svg_plot(name, series));
    }
  }
  log_info("report: " + std::to_string(runs.size()) + " runs in " + std::to_string(groups.size()) +
           " groups -> " + out.string());
}

}  // namespace refgame
