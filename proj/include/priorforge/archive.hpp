#pragma once

#include "priorforge/rng.hpp"
#include "priorforge/table.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace priorforge {

inline constexpr const char* kArchiveFormat = "priorforge-v1";

struct ArchiveEntry {
  Table table;
  std::uint64_t seed = 0;
};

// 17 significant digits; integer-valued categorical cells are written bare.
std::string format_real(double value);

void write_table_csv(const std::filesystem::path& path, const Table& table);

// priorforge-v1: manifest.json plus one CSV per table.
void write_archive(const std::filesystem::path& dir, const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& dir);

struct IngestOptions {
  std::optional<std::string> target_column;  // default: last column
  std::optional<TaskFamily> task;            // default: inferred
};

// Reads an arbitrary CSV with a header row. Non-numeric columns are
// label-encoded by first appearance; rows with missing cells are dropped.
// The result may exceed the model's feature ceiling; see cap_table.
Table ingest_csv(const std::filesystem::path& path, const IngestOptions& options = {});

struct CapOptions {
  int max_features = kMaxFeatures;
  int max_rows = 512;
  bool subsample_columns = false;
};

// Applies the feature/row ceilings. Extra rows are always subsampled; extra
// columns raise CapError unless subsample_columns is set.
Table cap_table(const Table& table, const CapOptions& options, Rng& rng);

}  // namespace priorforge
