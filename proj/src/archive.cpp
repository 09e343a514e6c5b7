#include "priorforge/archive.hpp"

#include "priorforge/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace priorforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool is_missing(const std::string& cell) {
  static const std::set<std::string> tokens = {"", "NA", "na", "N/A", "NaN", "nan", "?", "null", "NULL"};
  return tokens.contains(cell);
}

json col_kind_json(const ColumnKind& kind) {
  if (kind.is_categorical()) return {{"kind", "categorical"}, {"cardinality", kind.cardinality}};
  return {{"kind", "continuous"}};
}

ColumnKind col_kind_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "continuous") return ColumnKind::continuous();
  if (kind == "categorical") return ColumnKind::categorical(j.at("cardinality").get<int>());
  throw IngestError("unknown column kind '" + kind + "'");
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path, std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + ": empty file");
  header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IngestError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    for (auto& c : cells) c = trim(c);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::string format_real(double value) {
  if (value == std::floor(value) && std::abs(value) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(value));
    return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void write_table_csv(const fs::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (int j = 0; j < table.cols(); ++j) out << 'f' << j << ',';
  out << "target\n";
  for (int i = 0; i < table.rows(); ++i) {
    for (int j = 0; j < table.cols(); ++j) out << format_real(table.features(i, j)) << ',';
    out << format_real(table.target(i)) << '\n';
  }
}

void write_archive(const fs::path& dir, const std::vector<ArchiveEntry>& entries) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = kArchiveFormat;
  manifest["tables"] = json::array();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [table, seed] = entries[k];
    char name[32];
    std::snprintf(name, sizeof name, "table_%05zu.csv", k);
    write_table_csv(dir / name, table);
    json t;
    t["file"] = name;
    t["N"] = table.rows();
    t["d"] = table.cols();
    t["task"] = std::string(to_string(table.task.family));
    t["num_classes"] = table.task.is_classification() ? table.task.num_classes : 0;
    t["col_kinds"] = json::array();
    for (const auto& kind : table.col_kinds) t["col_kinds"].push_back(col_kind_json(kind));
    t["prior_tag"] = table.prior_tag ? json(std::string(to_string(*table.prior_tag))) : json(nullptr);
    t["seed"] = seed;
    if (!table.gen_info.empty()) {
      json info = json::object();
      for (const auto& [key, value] : table.gen_info) info[key] = value;
      t["generator"] = info;
    }
    manifest["tables"].push_back(std::move(t));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::vector<ArchiveEntry> read_archive(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IngestError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestError(std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kArchiveFormat)
    throw IngestError("unsupported archive format in " + dir.string());
  std::vector<ArchiveEntry> entries;
  for (const auto& t : manifest.at("tables")) {
    ArchiveEntry entry;
    auto& table = entry.table;
    entry.seed = t.at("seed").get<std::uint64_t>();
    const int n = t.at("N").get<int>();
    const int d = t.at("d").get<int>();
    const auto family = parse_task_family(t.at("task").get<std::string>());
    table.task = family == TaskFamily::Classification
                     ? TaskKind::classification(t.at("num_classes").get<int>())
                     : TaskKind::regression();
    for (const auto& k : t.at("col_kinds")) table.col_kinds.push_back(col_kind_from_json(k));
    if (!t.at("prior_tag").is_null()) table.prior_tag = parse_prior_kind(t.at("prior_tag").get<std::string>());
    if (t.contains("generator"))
      for (const auto& [key, value] : t["generator"].items()) table.gen_info.emplace_back(key, value.get<double>());

    std::vector<std::string> header;
    const auto rows = read_csv_rows(dir / t.at("file").get<std::string>(), header);
    if (static_cast<int>(rows.size()) != n || static_cast<int>(header.size()) != d + 1)
      throw IngestError("table " + t.at("file").get<std::string>() + " does not match its manifest shape");
    table.features.resize(n, d);
    table.target.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= d; ++j) {
        const auto v = parse_number(rows[i][j]);
        if (!v) throw IngestError("non-numeric cell in archive table at row " + std::to_string(i));
        if (j < d)
          table.features(i, j) = *v;
        else
          table.target(i) = *v;
      }
    }
    table.validate();
    entries.push_back(std::move(entry));
  }
  return entries;
}

Table ingest_csv(const fs::path& path, const IngestOptions& options) {
  std::vector<std::string> header;
  auto rows = read_csv_rows(path, header);
  if (header.size() < 2) throw IngestError(path.string() + ": need at least one feature and a target column");

  std::size_t target_col = header.size() - 1;
  if (options.target_column) {
    const auto it = std::find(header.begin(), header.end(), *options.target_column);
    if (it == header.end()) throw IngestError(path.string() + ": no column named '" + *options.target_column + "'");
    target_col = static_cast<std::size_t>(it - header.begin());
  }

  std::erase_if(rows, [](const auto& r) { return std::any_of(r.begin(), r.end(), is_missing); });
  if (rows.size() < 2) throw IngestError(path.string() + ": fewer than 2 complete rows");

  const std::size_t ncols = header.size();
  std::vector<bool> numeric(ncols, true);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < ncols; ++j)
      if (numeric[j] && !parse_number(r[j])) numeric[j] = false;

  // Label encoding by first appearance.
  auto encode = [&](std::size_t j) {
    std::map<std::string, int> codes;
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      auto [it, inserted] = codes.try_emplace(r[j], static_cast<int>(codes.size()));
      out.push_back(it->second);
    }
    return std::make_pair(out, static_cast<int>(codes.size()));
  };

  Table table;
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(ncols) - 1;
  table.features.resize(n, d);
  table.target.resize(n);
  int out_j = 0;
  for (std::size_t j = 0; j < ncols; ++j) {
    if (j == target_col) continue;
    if (numeric[j]) {
      for (int i = 0; i < n; ++i) table.features(i, out_j) = *parse_number(rows[i][j]);
      table.col_kinds.push_back(ColumnKind::continuous());
    } else {
      auto [codes, card] = encode(j);
      for (int i = 0; i < n; ++i) table.features(i, out_j) = codes[i];
      table.col_kinds.push_back(card >= 2 ? ColumnKind::categorical(card) : ColumnKind::continuous());
    }
    ++out_j;
  }

  std::vector<double> raw_target;
  int num_classes = 0;
  bool classification;
  if (!numeric[target_col]) {
    if (options.task == TaskFamily::Regression)
      throw IngestError(path.string() + ": non-numeric target cannot be a regression target");
    auto [codes, card] = encode(target_col);
    raw_target = std::move(codes);
    num_classes = card;
    classification = true;
  } else {
    for (const auto& r : rows) raw_target.push_back(*parse_number(r[target_col]));
    std::set<double> distinct(raw_target.begin(), raw_target.end());
    const bool integral = std::all_of(raw_target.begin(), raw_target.end(),
                                      [](double v) { return v == std::floor(v); });
    classification = options.task ? *options.task == TaskFamily::Classification
                                   : integral && distinct.size() <= static_cast<std::size_t>(kMaxClasses);
    if (classification) {
      // Numeric labels are remapped in sorted order.
      std::map<double, int> codes;
      for (double v : distinct) codes.emplace(v, static_cast<int>(codes.size()));
      for (auto& v : raw_target) v = codes.at(v);
      num_classes = static_cast<int>(codes.size());
    }
  }
  for (int i = 0; i < n; ++i) table.target(i) = raw_target[i];
  if (classification) {
    if (num_classes < 2) throw IngestError(path.string() + ": target has a single class");
    if (num_classes > kMaxClasses)
      throw CapError(path.string() + ": " + std::to_string(num_classes) + " classes exceed the limit of " +
                     std::to_string(kMaxClasses) + "; merge rare classes before ingesting");
    table.task = TaskKind::classification(num_classes);
  } else {
    table.task = TaskKind::regression();
  }
  table.validate(std::max(d, 1));
  return table;
}

Table cap_table(const Table& table, const CapOptions& options, Rng& rng) {
  const int n = table.rows();
  const int d = table.cols();
  std::vector<int> cols(d);
  for (int j = 0; j < d; ++j) cols[j] = j;
  if (d > options.max_features) {
    if (!options.subsample_columns)
      throw CapError("table has " + std::to_string(d) + " features, more than the model limit of " +
                     std::to_string(options.max_features) +
                     "; drop columns beforehand or enable column subsampling");
    Rng col_rng = rng.child("columns");
    cols = col_rng.sample_without_replacement(d, options.max_features);
    std::sort(cols.begin(), cols.end());
  }
  std::vector<int> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = i;
  if (n > options.max_rows) {
    Rng row_rng = rng.child("rows");
    rows = row_rng.sample_without_replacement(n, options.max_rows);
    std::sort(rows.begin(), rows.end());
  }
  Table out;
  out.task = table.task;
  out.prior_tag = table.prior_tag;
  out.gen_info = table.gen_info;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  out.target.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out.features(i, j) = table.features(rows[i], cols[j]);
    out.target(i) = table.target(rows[i]);
  }
  for (int j : cols) out.col_kinds.push_back(table.col_kinds[j]);
  if (out.task.is_classification()) {
    // Row subsampling can drop classes; compact labels so they stay dense.
    std::set<int> present;
    for (Eigen::Index i = 0; i < out.target.size(); ++i) present.insert(static_cast<int>(out.target(i)));
    if (static_cast<int>(present.size()) < out.task.num_classes && present.size() >= 2) {
      std::map<int, int> remap;
      for (int c : present) remap.emplace(c, static_cast<int>(remap.size()));
      for (Eigen::Index i = 0; i < out.target.size(); ++i) out.target(i) = remap.at(static_cast<int>(out.target(i)));
      out.task = TaskKind::classification(static_cast<int>(present.size()));
    }
  }
  out.validate();
  return out;
}

}  // namespace priorforge
