#ifndef PCDAL_IO_HPP
#define PCDAL_IO_HPP

// Manifest parsing and result serialization shared by the CLI and simulator.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "pcdal/error.hpp"
#include "pcdal/pcem.hpp"

namespace pcdal::io {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw Error("cannot format double");
  return std::string(buf, res.ptr);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

/// Score manifest: [{"sample_id", "task", "predictions": [{"perturbation", "path", "realigned"}]}].
/// Relative paths resolve against `base_dir`.
inline std::vector<SampleDescriptor> parse_score_manifest(const nlohmann::json& j,
                                                          const std::filesystem::path& base_dir) {
  if (!j.is_array()) throw FormatError("score manifest must be a JSON array");
  std::vector<SampleDescriptor> out;
  try {
    for (const auto& s : j) {
      SampleDescriptor d;
      d.sample_id = s.at("sample_id").get<std::string>();
      d.task = parse_task(s.at("task").get<std::string>());
      for (const auto& p : s.at("predictions")) {
        PredictionRef ref;
        ref.perturbation = parse_transform(p.at("perturbation").get<std::string>());
        ref.path = resolve(base_dir, p.at("path").get<std::string>());
        ref.realigned = p.value("realigned", true);
        d.predictions.push_back(std::move(ref));
      }
      out.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("score manifest: ") + e.what());
  }
  return out;
}

inline std::string score_line(const ScoreRecord& r) {
  return nlohmann::json{{"sample_id", r.sample_id}, {"score", r.score}, {"n_predictions", r.n_predictions}}.dump();
}

/// JSON lines, one record per sample; failed samples carry an "error" field.
inline std::string scores_jsonl(const std::vector<BatchEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (e.record)
      out += score_line(*e.record);
    else
      out += nlohmann::json{{"sample_id", e.sample_id}, {"error", e.error}}.dump();
    out += "\n";
  }
  return out;
}

inline std::string scores_csv(const std::vector<BatchEntry>& entries) {
  std::string out = "sample_id,score,n_predictions\n";
  for (const auto& e : entries) {
    if (!e.record) continue;
    out += e.record->sample_id + "," + format_double(e.record->score) + "," +
           std::to_string(e.record->n_predictions) + "\n";
  }
  return out;
}

/// Reads score records from JSON lines; lines carrying "error" are skipped.
inline std::vector<ScoreRecord> read_scores_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("error")) continue;
      out.push_back(ScoreRecord{j.at("sample_id").get<std::string>(), j.at("score").get<double>(),
                                j.value("n_predictions", std::size_t{0})});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pcdal::io

#endif  // PCDAL_IO_HPP
