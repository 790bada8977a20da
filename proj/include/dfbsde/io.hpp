#pragma once

// Plot-ready CSV and JSON-lines output.
//
// Numbers are written with std::to_chars (shortest round-trip form), so the
// output never depends on the process locale. Non-finite values are written
// as nan, inf and -inf. Empty cells mean "not defined at this time point".

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfbsde/errors.hpp"
#include "dfbsde/fbsde.hpp"
#include "dfbsde/penalties.hpp"

namespace dfbsde::io {

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) os << ',';
    os << cells[i];
  }
  os << '\n';
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot open " + path.string() + " for writing");
  return os;
}

// ---------------------------------------------------------------------------
// Trajectory file
// ---------------------------------------------------------------------------

inline std::vector<std::string> trajectory_header(const std::vector<std::string>& states,
                                                  const std::vector<std::string>& controls) {
  std::vector<std::string> h{"trial", "step", "t"};
  h.insert(h.end(), states.begin(), states.end());
  h.insert(h.end(), controls.begin(), controls.end());
  for (const char* c : {"y", "running_cost", "penalty", "violation_flag"}) h.emplace_back(c);
  return h;
}

/// One row per (trial, time point). Controls and costs are empty on the
/// terminal row. violation_flag is 1 when any constraint row of `pen` is
/// outside its bounds at that state, regardless of the penalty kind.
inline void write_trajectories(std::ostream& os, const fbsde::RolloutBatch& b, const std::vector<std::string>& states,
                               const std::vector<std::string>& controls, const cost::PenaltySpec& pen) {
  write_row(os, trajectory_header(states, controls));
  const auto n = static_cast<Eigen::Index>(states.size());
  const auto m = static_cast<Eigen::Index>(controls.size());
  std::vector<std::string> cells;
  for (int r = 0; r < b.rows; ++r) {
    for (int k = 0; k <= b.steps; ++k) {
      const auto& x = b.x[static_cast<std::size_t>(k)];
      cells.clear();
      cells.push_back(std::to_string(r));
      cells.push_back(std::to_string(k));
      cells.push_back(format_number(k * b.dt));
      for (Eigen::Index j = 0; j < n; ++j) cells.push_back(format_number(x(r, j)));
      const bool last = k == b.steps;
      for (Eigen::Index j = 0; j < m; ++j) {
        cells.push_back(last ? std::string() : format_number(b.u[static_cast<std::size_t>(k)](r, j)));
      }
      cells.push_back(format_number(b.y[static_cast<std::size_t>(k)](r, 0)));
      cells.push_back(last ? std::string() : format_number(b.run_cost[static_cast<std::size_t>(k)](r, 0)));
      cells.push_back(last ? std::string() : format_number(b.penalty[static_cast<std::size_t>(k)](r, 0)));
      bool outside = false;
      for (int c = 0; c < pen.rows() && !outside; ++c) {
        double v = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) v += pen.c_map(c, j) * x(r, j);
        outside = v < pen.b_min(c) || v > pen.b_max(c);
      }
      cells.emplace_back(outside ? "1" : "0");
      write_row(os, cells);
    }
  }
}

// ---------------------------------------------------------------------------
// Penalty curves
// ---------------------------------------------------------------------------

/// Samples p(x) for a scalar constraint c(x) = x at `samples` evenly spaced
/// points of [lo, hi], once per steepness. Columns: kind, k, x, p.
inline void write_penalty_curves(std::ostream& os, cost::PenaltySpec spec, const std::vector<double>& ks, double lo,
                                 double hi, int samples) {
  if (samples < 2) throw UsageError("penalty-plot: need at least 2 samples");
  if (!(hi > lo)) throw UsageError("penalty-plot: need hi > lo");
  spec.c_map = Eigen::MatrixXd::Ones(1, 1);
  const char* kind = spec.kind == cost::PenaltyKind::Logistic ? "logistic"
                     : spec.kind == cost::PenaltyKind::Relu   ? "relu"
                                                              : "none";
  write_row(os, {"kind", "k", "x", "p"});
  for (double k : ks) {
    spec.k = k;
    for (int i = 0; i < samples; ++i) {
      const double x = lo + (hi - lo) * i / (samples - 1);
      const double p = cost::penalty(std::array<double, 1>{x}, spec);
      write_row(os, {kind, format_number(k), format_number(x), format_number(p)});
    }
  }
}

// ---------------------------------------------------------------------------
// JSON lines
// ---------------------------------------------------------------------------

inline void write_jsonl(std::ostream& os, const nlohmann::json& j) { os << j.dump() << '\n'; }

}  // namespace dfbsde::io
