#include "tktr/io/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tktr/error.hpp"

namespace tktr::io {

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Original: return "original";
    case Phase::Decomposed: return "decomposed";
    case Phase::Reconstructed: return "reconstructed";
  }
  return "?";
}

Phase parse_phase(const std::string& s) {
  for (Phase p : {Phase::Original, Phase::Decomposed, Phase::Reconstructed})
    if (s == to_string(p)) return p;
  fail(ErrorCode::Format, "unknown phase '" + s + "'");
}

std::string format_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%zu,%llu,%.6g,%s", r.epoch, r.wall_time_s, r.train_loss,
                r.test_acc, r.param_count, static_cast<unsigned long long>(r.flops_est), r.lr, to_string(r.phase));
  return buf;
}

void append_metrics(const std::filesystem::path& path, const MetricsRow& row) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  require(bool(out), ErrorCode::Io, "cannot open metrics file '" + path.string() + "'");
  if (fresh) out << kMetricsHeader << '\n';
  out << format_row(row) << '\n';
  out.flush();
  require(bool(out), ErrorCode::Io, "error writing metrics file '" + path.string() + "'");
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::Io, "cannot open metrics file '" + path.string() + "'");
  std::string line;
  require(bool(std::getline(in, line)) && line == kMetricsHeader, ErrorCode::Format,
          "'" + path.string() + "' does not start with the metrics header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(f.size() == 8, ErrorCode::Format, where + ": expected 8 fields");
    MetricsRow r;
    try {
      std::size_t used = 0;
      auto whole = [&](const std::string& s) {
        require(used == s.size(), ErrorCode::Format, where + ": bad number '" + s + "'");
      };
      r.epoch = std::stoi(f[0], &used);
      whole(f[0]);
      r.wall_time_s = std::stod(f[1], &used);
      whole(f[1]);
      r.train_loss = std::stod(f[2], &used);
      whole(f[2]);
      r.test_acc = std::stod(f[3], &used);
      whole(f[3]);
      r.param_count = std::stoull(f[4], &used);
      whole(f[4]);
      r.flops_est = std::stoull(f[5], &used);
      whole(f[5]);
      r.lr = std::stod(f[6], &used);
      whole(f[6]);
    } catch (const std::logic_error&) {
      fail(ErrorCode::Format, where + ": bad number");
    }
    r.phase = parse_phase(f[7]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace tktr::io
