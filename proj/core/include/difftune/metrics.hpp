// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "difftune/common.hpp"

namespace difftune {

// One row per training round (or eval point for supervised runs).
struct MetricsRow {
  long round = 0;
  long samples_consumed = 0;
  double mean_reward = 0.0;
  double mean_quality = 0.0;
  double kl_estimate = 0.0;
  double grad_norm = 0.0;
  long is_discards = 0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  static constexpr const char* kHeader =
      "round,samples_consumed,mean_reward,mean_quality,kl_estimate,grad_norm,is_discards";

  void to_csv(const std::string& path) const;
  static MetricsLog from_csv(const std::string& path);
};

// Training-loss curve ("step,loss").
void write_loss_csv(const std::string& path,
                    const std::vector<std::pair<long, double>>& rows);

} // namespace difftune
