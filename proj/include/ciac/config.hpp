#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ciac/harness.hpp"

namespace ciac {

// Flat "section.key" -> value map read from an INI/TOML-style file.
class Config {
 public:
  static Config parse(std::istream& in);
  static Config load(const std::filesystem::path& path);
  // Inverse of dump().
  static Config from_dump(const std::string& text);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  // "section.key=value"
  void set_assignment(const std::string& assignment);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  long get(const std::string& key, long fallback) const;
  bool get(const std::string& key, bool fallback) const;
  std::vector<double> get(const std::string& key, const std::vector<double>& fallback) const;

  // Keys that were never read.
  std::vector<std::string> unused() const;
  std::string dump() const;
  // Sectioned file text accepted by parse().
  std::string ini() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

ExperimentSpec spec_from_config(const Config& c, Experiment experiment);
Config config_from_spec(const ExperimentSpec& spec);

TrainConfig train_config_from(const Config& c);

}  // namespace ciac
