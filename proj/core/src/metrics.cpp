// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace difftune {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

void MetricsLog::to_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("metrics: cannot open " + path + " for writing");
  out << kHeader << "\n";
  for (const auto& r : rows) {
    out << r.round << ',' << r.samples_consumed << ',' << fmt_double(r.mean_reward)
        << ',' << fmt_double(r.mean_quality) << ',' << fmt_double(r.kl_estimate)
        << ',' << fmt_double(r.grad_norm) << ',' << r.is_discards << "\n";
  }
}

MetricsLog MetricsLog::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw ConfigError("metrics: unexpected header in " + path);
  MetricsLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricsRow r;
    char comma = 0;
    ss >> r.round >> comma >> r.samples_consumed >> comma >> r.mean_reward >>
        comma >> r.mean_quality >> comma >> r.kl_estimate >> comma >>
        r.grad_norm >> comma >> r.is_discards;
    if (ss.fail()) throw ConfigError("metrics: malformed row in " + path);
    log.rows.push_back(r);
  }
  return log;
}

void write_loss_csv(const std::string& path,
                    const std::vector<std::pair<long, double>>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("loss csv: cannot open " + path + " for writing");
  out << "step,loss\n";
  for (const auto& [step, loss] : rows)
    out << step << ',' << fmt_double(loss) << "\n";
}

} // namespace difftune
