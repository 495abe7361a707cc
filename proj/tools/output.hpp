// Copyright 2026 The KDN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace kdn::cli {

enum class Format { kText, kCsv, kJson };

// Bad flags or flag values; exits with status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string num(double v, const char* fmt = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

// A command's result: rows for text/CSV, a document for JSON, and free-form
// lines printed after the table in text mode.
struct Report {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> notes;
  nlohmann::json doc = nlohmann::json::object();

  void print(Format format, std::ostream& os = std::cout) const {
    switch (format) {
      case Format::kJson:
        os << doc.dump(2) << '\n';
        return;
      case Format::kCsv:
        print_csv(os);
        return;
      case Format::kText:
        print_text(os);
        return;
    }
  }

 private:
  static std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

  void print_csv(std::ostream& os) const {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
      os << '\n';
    };
    if (!header.empty()) line(header);
    for (const auto& r : rows) line(r);
  }

  void print_text(std::ostream& os) const {
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) {
        width[i] = std::max(width[i], r[i].size());
      }
    }
    auto line = [&](const std::vector<std::string>& cells) {
      std::string out;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += "  ";
        out += cells[i];
        if (i + 1 < cells.size()) out.append(width[i] - cells[i].size(), ' ');
      }
      os << out << '\n';
    };
    if (!header.empty()) line(header);
    for (const auto& r : rows) line(r);
    for (const auto& n : notes) os << n << '\n';
  }
};

}  // namespace kdn::cli
