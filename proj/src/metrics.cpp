#include "scdmd/metrics.hpp"

#include "scdmd/error.hpp"

namespace scdmd {

JsonlWriter::JsonlWriter(const std::filesystem::path& path, std::string run_id,
                         std::string config_hash, bool append)
    : out_(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc)),
      run_id_(std::move(run_id)),
      config_hash_(std::move(config_hash)) {
  if (!out_) throw IoError("cannot open metrics file " + path.string());
}

void JsonlWriter::write(json record) {
  record["run_id"] = run_id_;
  record["config_hash"] = config_hash_;
  std::string line = record.dump();
  line.push_back('\n');
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw IoError("metrics write failed");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace scdmd
