#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace npd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required CSV column is missing.
class SchemaError : public Error {
 public:
  explicit SchemaError(std::string column)
      : Error("missing required column '" + column + "'"), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// A data row could not be mapped to a record. `row()` is the 0-based data row index.
class RowError : public Error {
 public:
  RowError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class DuplicateIdError : public Error {
 public:
  explicit DuplicateIdError(std::string id)
      : Error("duplicate id '" + id + "'"), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class UnknownIdError : public Error {
 public:
  explicit UnknownIdError(std::string id)
      : Error("unknown id '" + id + "'"), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text container. `offset()` is the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& what)
      : Error("format error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, std::size_t batch)
      : Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

}  // namespace npd
