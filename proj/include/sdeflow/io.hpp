/// @file io.hpp
/// @brief Deterministic serialization helpers: RFC-4180 CSV documents,
///        round-trip-safe number rendering, FNV-1a checksums, and small file
///        utilities shared by the experiment harness.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sdeflow {

/// RFC-4180 field quoting: a field containing a comma, double quote, CR, or
/// LF is wrapped in double quotes with embedded quotes doubled; anything else
/// passes through unchanged.
std::string csv_escape(const std::string& field);

/// Round-trip-safe decimal rendering (17 significant digits, %.17g). The
/// output is a pure function of the bit pattern, so identical runs serialize
/// identically.
std::string format_double(double v);

/// In-memory CSV document with a mandatory header row. Rows are emitted with
/// CRLF endings per RFC 4180; cell arity is checked against the header.
struct CsvDoc {
  explicit CsvDoc(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  /// Convenience: format_double on every cell.
  void add_numeric_row(const std::vector<double>& cells);

  size_t row_count() const { return body.size(); }
  /// Render the whole document (header + rows).
  std::string str() const;

 private:
  std::vector<std::string> head;
  std::vector<std::vector<std::string>> body;
};

/// FNV-1a 64-bit checksum.
uint64_t fnv1a64(std::string_view bytes);

/// Fixed-width lowercase hex rendering of a 64-bit value.
std::string hex64(uint64_t v);

/// Write content to path, creating parent directories as needed. Throws
/// std::runtime_error on I/O failure.
void write_text_file(const std::string& path, const std::string& content);

/// Read an entire file as bytes. Throws std::runtime_error when unreadable.
std::string read_text_file(const std::string& path);

}  // namespace sdeflow
