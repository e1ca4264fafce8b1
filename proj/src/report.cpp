#include "gdpa/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdpa/config.hpp"
#include "gdpa/errors.hpp"

namespace gdpa {

namespace {

constexpr const char* kHeader =
    "run_id,name,config_digest,dataset_digest,seed,clean_accuracy,metric,value,"
    "setup_ms,train_ms,eval_ms,timestamp";

std::string f4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return std::string(buf);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string make_run_id(const std::string& name, const std::string& config_digest,
                        const std::string& dataset_digest, uint64_t seed) {
  return hex64(fnv1a64(name + "|" + config_digest + "|" + dataset_digest + "|" +
                       std::to_string(seed)));
}

std::string report_header() { return std::string(kHeader) + "\n"; }

std::string report_row(const AttackReport& r) {
  std::ostringstream os;
  os << csv_field(r.run_id) << ',' << csv_field(r.name) << ',' << csv_field(r.config_digest)
     << ',' << csv_field(r.dataset_digest) << ',' << r.seed << ',' << f4(r.clean_accuracy) << ','
     << csv_field(r.metric) << ',' << f4(r.value) << ',' << f4(r.setup_ms) << ','
     << f4(r.train_ms) << ',' << f4(r.eval_ms) << ',' << r.timestamp << '\n';
  return os.str();
}

void report_emit(const std::string& path, const std::vector<AttackReport>& rows) {
  std::string buf = report_header();
  for (const auto& r : rows) buf += report_row(r);
  const std::string tmp = path + ".tmp";
  FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw Error("report: cannot open for writing: " + tmp);
  const size_t wrote = std::fwrite(buf.data(), 1, buf.size(), f);
  const int closed = std::fclose(f);
  if (wrote != buf.size() || closed != 0) throw Error("report: write failed: " + tmp);
  std::filesystem::rename(tmp, path);
}

void report_append(const std::string& path, const AttackReport& row) {
  std::string buf;
  if (!std::filesystem::exists(path) || std::filesystem::file_size(path) == 0)
    buf = report_header();
  buf += report_row(row);
  FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw Error("report: cannot open for append: " + path);
  const size_t wrote = std::fwrite(buf.data(), 1, buf.size(), f);
  const int closed = std::fclose(f);
  if (wrote != buf.size() || closed != 0) throw Error("report: append failed: " + path);
}

std::vector<AttackReport> report_parse(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("report: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) return {};
  if (line != kHeader) throw Error("report: unexpected header in " + path);
  std::vector<AttackReport> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 12) throw Error("report: malformed row in " + path);
    AttackReport r;
    r.run_id = fields[0];
    r.name = fields[1];
    r.config_digest = fields[2];
    r.dataset_digest = fields[3];
    r.seed = std::stoull(fields[4]);
    r.clean_accuracy = std::stod(fields[5]);
    r.metric = fields[6];
    r.value = std::stod(fields[7]);
    r.setup_ms = std::stod(fields[8]);
    r.train_ms = std::stod(fields[9]);
    r.eval_ms = std::stod(fields[10]);
    r.timestamp = std::stoull(fields[11]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace gdpa
