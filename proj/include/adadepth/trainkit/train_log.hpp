#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adadepth/core/error.hpp"

namespace adadepth::trainkit {

/// One outer iteration of adaptation.
struct TrainRecord {
  long long iter = 0;
  double l_adv_d = 0;    // generator loss against D_Y (0 when D_Y is off)
  double l_adv_f = 0;    // generator loss against D_F
  double l_content = 0;  // DCR / RTF / FCF term, or BerHu on labeled batches
  double l_final = 0;    // l_adv_d + l_adv_f + lambda * l_content
  double d_f_loss = 0;
  double d_y_loss = 0;
  double pred_var = 0;  // mean over pixels of the across-batch variance of predicted depth
  bool labeled = false;
  std::optional<std::string> warning;
  double wall_s = 0;

  /// Equality of everything except wall-clock time.
  bool same_values(const TrainRecord& o) const {
    return iter == o.iter && l_adv_d == o.l_adv_d && l_adv_f == o.l_adv_f && l_content == o.l_content &&
           l_final == o.l_final && d_f_loss == o.d_f_loss && d_y_loss == o.d_y_loss && pred_var == o.pred_var &&
           labeled == o.labeled && warning == o.warning;
  }
};

struct TrainLog {
  std::uint64_t seed = 0;
  std::vector<TrainRecord> records;

  std::size_t size() const { return records.size(); }
  const TrainRecord& back() const { return records.back(); }

  bool same_values(const TrainLog& o) const {
    if (seed != o.seed || records.size() != o.records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (!records[i].same_values(o.records[i])) return false;
    return true;
  }

  std::size_t warnings() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.warning.has_value();
    return n;
  }
};

inline nlohmann::ordered_json to_json(const TrainRecord& r, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["seed"] = seed;
  j["L_advD"] = r.l_adv_d;
  j["L_advF"] = r.l_adv_f;
  j["L_content"] = r.l_content;
  j["L_final"] = r.l_final;
  j["D_F_loss"] = r.d_f_loss;
  j["D_Y_loss"] = r.d_y_loss;
  j["pred_var"] = r.pred_var;
  j["labeled"] = r.labeled;
  j["warning"] = r.warning ? nlohmann::ordered_json(*r.warning) : nlohmann::ordered_json(nullptr);
  j["wall_s"] = r.wall_s;
  return j;
}

inline TrainRecord record_from_json(const nlohmann::json& j) {
  TrainRecord r;
  r.iter = j.at("iter").get<long long>();
  r.l_adv_d = j.at("L_advD").get<double>();
  r.l_adv_f = j.at("L_advF").get<double>();
  r.l_content = j.at("L_content").get<double>();
  r.l_final = j.at("L_final").get<double>();
  r.d_f_loss = j.at("D_F_loss").get<double>();
  r.d_y_loss = j.at("D_Y_loss").get<double>();
  r.pred_var = j.at("pred_var").get<double>();
  r.labeled = j.at("labeled").get<bool>();
  if (!j.at("warning").is_null()) r.warning = j.at("warning").get<std::string>();
  r.wall_s = j.at("wall_s").get<double>();
  return r;
}

/// Newline-delimited JSON, one record per line.
inline void write_ndjson(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  for (const auto& r : log.records) out << to_json(r, log.seed).dump() << "\n";
  if (!out) throw IoError("cannot write training log " + path);
}

inline TrainLog read_ndjson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read training log " + path);
  TrainLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    log.seed = j.at("seed").get<std::uint64_t>();
    log.records.push_back(record_from_json(j));
  }
  return log;
}

/// Flags a sustained drop of the prediction variance below `ratio` times its
/// first value: `window` consecutive low iterations raise one warning.
class CollapseMonitor {
 public:
  CollapseMonitor(int window, double ratio) : window_(window), ratio_(ratio) {}

  std::optional<std::string> observe(double pred_var) {
    if (!initial_) initial_ = pred_var;
    if (*initial_ > 0 && pred_var < ratio_ * *initial_) {
      if (++low_ == window_) {
        return "mode_collapse: prediction variance below " + std::to_string(ratio_) + " of its initial value for " +
               std::to_string(window_) + " iterations";
      }
    } else {
      low_ = 0;
    }
    return std::nullopt;
  }

  std::optional<double> initial() const { return initial_; }
  int low_streak() const { return low_; }
  void restore(std::optional<double> initial, int low) {
    initial_ = initial;
    low_ = low;
  }

 private:
  int window_;
  double ratio_;
  std::optional<double> initial_;
  int low_ = 0;
};

}  // namespace adadepth::trainkit
