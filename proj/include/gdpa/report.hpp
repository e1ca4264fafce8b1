#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gdpa {

// One row per experiment run. `metric` names what `value` holds (asr,
// robust_accuracy, inference_ms, ...); timings are split per phase so
// benchmark numbers never include dataset or checkpoint I/O.
struct AttackReport {
  std::string run_id;
  std::string name;
  std::string config_digest;
  std::string dataset_digest;
  uint64_t seed = 0;
  double clean_accuracy = 0;
  std::string metric;
  double value = 0;
  double setup_ms = 0;
  double train_ms = 0;
  double eval_ms = 0;
  uint64_t timestamp = 0;  // unix seconds
};

std::string make_run_id(const std::string& name, const std::string& config_digest,
                        const std::string& dataset_digest, uint64_t seed);

std::string report_header();
std::string report_row(const AttackReport& r);

// Fresh file: header + rows, written via temp + rename.
void report_emit(const std::string& path, const std::vector<AttackReport>& rows);
// Append one row (single write); creates the file with a header first.
void report_append(const std::string& path, const AttackReport& row);

std::vector<AttackReport> report_parse(const std::string& path);

}  // namespace gdpa
