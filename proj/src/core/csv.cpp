#include "kvdrive/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <iomanip>

namespace kvdrive {

namespace {

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_real(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

void CsvTable::sort_rows() { std::sort(rows_.begin(), rows_.end()); }

void CsvTable::write(std::ostream& os, std::uint64_t config_hash) const {
  for (std::size_t i = 0; i < schema_.size(); ++i) {
    os << (i ? "," : "") << schema_[i].name;
  }
  os << '\n';
  for (const auto& r : rows_) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
  os << "# config_hash=" << std::hex << std::setw(16) << std::setfill('0') << config_hash
     << std::dec << " version=" << kToolVersion << '\n';
}

std::string CsvTable::str(std::uint64_t config_hash) const {
  std::ostringstream os;
  write(os, config_hash);
  return os.str();
}

CsvValidation validate_csv(std::string_view text, const CsvSchema& schema) {
  CsvValidation result;
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  auto bad = [&](std::string msg) {
    result.ok = false;
    result.message = std::move(msg);
    return result;
  };
  if (lines.size() < 2) return bad("missing header or metadata line");
  const auto header = split(lines.front());
  if (header.size() != schema.size()) return bad("header column count mismatch");
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (header[i] != schema[i].name) return bad("unexpected column '" + header[i] + "'");
  }
  const auto meta = lines.back();
  if (meta.rfind("# config_hash=", 0) != 0 || meta.find(" version=") == std::string_view::npos) {
    return bad("missing trailing metadata comment");
  }
  for (std::size_t li = 1; li + 1 < lines.size(); ++li) {
    const auto cells = split(lines[li]);
    if (cells.size() != schema.size()) {
      return bad("row " + std::to_string(li) + " has " + std::to_string(cells.size()) + " fields");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const bool ok = schema[c].type == ColumnType::kInteger ? is_integer(cells[c])
                      : schema[c].type == ColumnType::kReal  ? is_real(cells[c])
                                                             : !cells[c].empty();
      if (!ok) return bad("row " + std::to_string(li) + " column " + schema[c].name + " = '" + cells[c] + "'");
    }
    ++result.rows;
  }
  return result;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace kvdrive
