// Copyright (c) 2026, the serattr authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SERATTR_CSV_HPP_
#define SERATTR_CSV_HPP_

#include <string>
#include <string_view>
#include <vector>

#include "serattr/common.hpp"

namespace serattr {

/** Splits one CSV line into fields. Double quotes escape commas and quotes
 *  ("" inside a quoted field is a literal quote). Embedded newlines are not
 *  supported; manifests are strictly line-oriented. */
inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
    ++i;
  }
  if (quoted) throw ValidationError("unterminated quote in CSV line");
  fields.push_back(std::move(cur));
  return fields;
}

/** Quotes a field for csv_join. Fields carrying line breaks are rejected:
 *  the reader is line-oriented and could never get them back. */
inline std::string csv_escape(std::string_view field) {
  bool needs_quotes = false;
  for (char c : field) {
    if (c == '\n' || c == '\r') {
      throw ValidationError("CSV field contains a line break");
    }
    if (c == ',' || c == '"') {
      needs_quotes = true;
    }
  }
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_join(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  return out;
}

// Strips a trailing '\r' so CRLF manifests parse the same as LF ones.
inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace serattr

#endif  // SERATTR_CSV_HPP_
