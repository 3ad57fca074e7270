#pragma once

#include <string>
#include <vector>

#include "cotbench/metrics.hpp"

namespace cotbench::testing {

struct PublishedRow {
  std::string model;
  ReportValues values;
  bool identities_hold;  // false for the two rows whose entries are mutually inconsistent
};

// Benchmark results table: R_o, R_h, R_cot, C_b, C_f as printed (two decimals).
inline std::vector<PublishedRow> published_rows() {
  auto row = [](std::string name, double r_o, double r_h, double r_cot, double c_b, double c_f, bool ok) {
    ReportValues v;
    v.r_o = r_o;
    v.r_h = r_h;
    v.r_cot = r_cot;
    v.c_b = c_b;
    v.c_f = c_f;
    return PublishedRow{std::move(name), v, ok};
  };
  return {
      row("Random", 0.14, 16.67, 0.82, 0.82, 16.67, true),
      row("Turbo", 15.97, 33.42, 40.26, 47.79, 39.66, true),
      row("OFA-Large", 0.12, 17.63, 0.62, 0.70, 20.0, true),
      row("OFA-Huge", 0.06, 16.40, 0.68, 0.38, 9.09, true),
      row("BLIP-2-OPT", 0.06, 14.61, 0.62, 0.42, 10.0, true),
      row("BLIP-2-T5", 54.56, 76.82, 65.66, 71.03, 83.10, true),
      row("InstructBLIP-T5", 54.01, 76.14, 65.35, 70.93, 82.64, true),
      row("LLaVA", 0.12, 14.67, 17.82, 17.65, 14.29, false),
      row("miniGPT-4", 2.10, 23.12, 38.75, 41.80, 28.81, false),
      row("CoTBLIP", 56.91, 80.05, 65.66, 71.09, 86.67, true),
      row("Human", 85.0, 93.0, 89.0, 91.40, 95.51, true),
  };
}

}  // namespace cotbench::testing
