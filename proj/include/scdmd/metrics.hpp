#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace scdmd {

using json = nlohmann::json;

/// Receives one metrics record per training iteration.
class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(json record) = 0;
};

/// Keeps records in memory.
class MetricsLog final : public MetricsSink {
 public:
  void write(json record) override { records_.push_back(std::move(record)); }
  const std::vector<json>& records() const { return records_; }

 private:
  std::vector<json> records_;
};

/// Appends records to a JSONL file. Each record is serialized first and
/// emitted with a single write, so an abort never leaves a partial line.
/// Every record is stamped with the run id and config hash. `append` keeps
/// existing lines (resumed runs).
class JsonlWriter final : public MetricsSink {
 public:
  JsonlWriter(const std::filesystem::path& path, std::string run_id,
              std::string config_hash, bool append = false);
  void write(json record) override;

 private:
  std::ofstream out_;
  std::string run_id_;
  std::string config_hash_;
};

/// Forwards to several sinks.
class TeeSink final : public MetricsSink {
 public:
  explicit TeeSink(std::vector<MetricsSink*> sinks) : sinks_(std::move(sinks)) {}
  void write(json record) override {
    for (MetricsSink* s : sinks_) s->write(record);
  }

 private:
  std::vector<MetricsSink*> sinks_;
};

/// Reads a JSONL file, one json value per line.
std::vector<json> read_jsonl(const std::filesystem::path& path);

}  // namespace scdmd
