#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chipqa/core.hpp"
#include "chipqa/model.hpp"

namespace chipqa {

struct FeatureTable {
  Matrix x;
  std::vector<std::string> video_id;
  std::vector<std::string> content_id;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

namespace detail {

inline double parse_cell(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::MalformedHeader, where + ": not a number: '" + s + "'");
  }
}

inline std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return in;
}

}  // namespace detail

// Columns: any number of numeric feature columns, then video_id and content_id (by header name).
inline FeatureTable read_feature_csv(const std::string& path) {
  auto in = detail::open_text(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyInput, path + ": empty feature file");
  const auto header = split_csv_line(line);
  int vid = -1, cid = -1;
  std::vector<int> feat;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    if (header[i] == "video_id") vid = i;
    else if (header[i] == "content_id") cid = i;
    else feat.push_back(i);
  }
  if (vid < 0 || cid < 0) throw Error(ErrorCode::MalformedHeader, path + ": needs video_id and content_id columns");
  FeatureTable t;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw Error(ErrorCode::DimensionMismatch, where + ": wrong column count");
    std::vector<double> row;
    row.reserve(feat.size());
    for (int i : feat) row.push_back(detail::parse_cell(cells[i], where));
    t.x.push_back(std::move(row));
    t.video_id.push_back(cells[vid]);
    t.content_id.push_back(cells[cid]);
  }
  if (t.x.empty()) throw Error(ErrorCode::EmptyInput, path + ": no rows");
  return t;
}

// Columns video_id and mos (by header name).
inline std::map<std::string, double> read_mos_csv(const std::string& path) {
  auto in = detail::open_text(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyInput, path + ": empty MOS file");
  const auto header = split_csv_line(line);
  int vid = -1, mos = -1;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    if (header[i] == "video_id") vid = i;
    if (header[i] == "mos") mos = i;
  }
  if (vid < 0 || mos < 0) throw Error(ErrorCode::MalformedHeader, path + ": needs video_id and mos columns");
  std::map<std::string, double> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw Error(ErrorCode::DimensionMismatch, where + ": wrong column count");
    out[cells[vid]] = detail::parse_cell(cells[mos], where);
  }
  return out;
}

// Scores aligned with the table's rows.
inline std::vector<double> align_mos(const FeatureTable& t, const std::map<std::string, double>& mos) {
  std::vector<double> y;
  y.reserve(t.video_id.size());
  for (const auto& v : t.video_id) {
    const auto it = mos.find(v);
    if (it == mos.end()) throw Error(ErrorCode::LengthMismatch, "no MOS for video '" + v + "'");
    y.push_back(it->second);
  }
  return y;
}

}  // namespace chipqa
