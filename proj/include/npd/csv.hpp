#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "npd/error.hpp"

namespace npd::csv {

using Row = std::vector<std::string>;

/// RFC 4180 reader: comma delimiter, double-quote quoting with "" escapes,
/// CRLF or LF record ends, embedded newlines inside quoted fields. A leading
/// UTF-8 byte-order mark is ignored, and blank lines are skipped.
inline std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  std::size_t i = 0;
  if (text.starts_with("\xEF\xBB\xBF")) i = 3;

  Row row;
  std::string field;
  bool field_started = false;  // distinguishes `""` from nothing on a blank line

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    if (row.empty() && !field_started) return;  // blank line
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };

  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (c == '"' && field.empty() && !field_started) {
      const std::size_t open = i;
      field_started = true;
      ++i;
      for (;;) {
        if (i >= n) throw FormatError(open, "unterminated quoted field");
        if (text[i] == '"') {
          if (i + 1 < n && text[i + 1] == '"') {
            field.push_back('"');
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        field.push_back(text[i++]);
      }
      // Anything between the closing quote and the delimiter is kept verbatim.
      while (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') field.push_back(text[i++]);
      continue;
    }
    if (c == ',') {
      end_field();
      ++i;
      // A trailing comma still implies one more (empty) field.
      if (i >= n || text[i] == '\n' || text[i] == '\r') field_started = true;
    } else if (c == '\r' || c == '\n') {
      end_row();
      ++i;
      if (c == '\r' && i < n && text[i] == '\n') ++i;
    } else {
      field.push_back(c);
      field_started = true;
      ++i;
    }
  }
  end_row();
  return rows;
}

inline void append_field(std::string& out, std::string_view field) {
  const bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs_quotes) {
    out.append(field);
    return;
  }
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

/// Writes rows with LF record ends, quoting only where required.
inline std::string write(const std::vector<Row>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(',');
      append_field(out, row[c]);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace npd::csv
