#pragma once

#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace kvdrive {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class ColumnType { kInteger, kReal, kText };

struct CsvColumn {
  std::string name;
  ColumnType type = ColumnType::kText;
};

using CsvSchema = std::vector<CsvColumn>;

// Accumulates rows and writes header, rows and the trailing metadata comment
// ("# config_hash=... version=...").
class CsvTable {
 public:
  explicit CsvTable(CsvSchema schema) : schema_(std::move(schema)) {}

  class Row {
   public:
    explicit Row(CsvTable& table) : table_(table) {}
    ~Row() { table_.rows_.push_back(std::move(cells_)); }
    Row(const Row&) = delete;
    Row& operator=(const Row&) = delete;

    template <typename T>
    Row& operator<<(const T& value) {
      std::ostringstream os;
      os.precision(10);
      os << value;
      cells_.push_back(os.str());
      return *this;
    }

   private:
    CsvTable& table_;
    std::vector<std::string> cells_;
  };

  Row row() { return Row(*this); }

  const CsvSchema& schema() const noexcept { return schema_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }

  void sort_rows();
  void write(std::ostream& os, std::uint64_t config_hash) const;
  std::string str(std::uint64_t config_hash) const;

 private:
  CsvSchema schema_;
  std::vector<std::vector<std::string>> rows_;
};

struct CsvValidation {
  bool ok = true;
  std::size_t rows = 0;
  std::string message;
};

// Checks header names, per-row field count and per-column type, and that the
// final line is the metadata comment.
CsvValidation validate_csv(std::string_view text, const CsvSchema& schema);

std::uint64_t fnv1a(std::string_view text);

}  // namespace kvdrive
