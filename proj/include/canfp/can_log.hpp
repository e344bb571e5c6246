#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "canfp/error.hpp"

namespace canfp {

inline constexpr std::uint32_t kMaxCanId = 0x7FF;
inline constexpr std::size_t kMaxPayload = 8;

/// One stripped CAN frame. Timestamps are kept as integer microseconds so the
/// text form round-trips exactly.
struct CanFrame {
  std::int64_t timestamp_us = 0;
  std::uint32_t can_id = 0;
  bool req = false;
  std::vector<std::uint8_t> data;

  double seconds() const { return static_cast<double>(timestamp_us) * 1e-6; }
  std::size_t len() const { return data.size(); }

  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

/// Frames of one trace, stably sorted by timestamp.
struct CanLog {
  std::vector<CanFrame> frames;
  std::string source_label;

  friend bool operator==(const CanLog&, const CanLog&) = default;
};

struct LineError {
  std::size_t line_no = 0;  // 1-based
  Errc code = Errc::malformed_line;
  std::string message;
};

struct ParseResult {
  CanLog log;
  std::vector<LineError> errors;
};

/// Parses one frame line. Throws Error (malformed_line, length_mismatch,
/// id_out_of_range) on any contract violation.
CanFrame parse_frame_line(std::string_view line);

/// Lenient parse: every non-blank, non-comment line yields either a frame or a
/// LineError. Frames are stably sorted by timestamp afterwards.
ParseResult parse_log(std::istream& in, std::string source_label);
ParseResult parse_log(std::string_view text, std::string source_label);

/// Strict parse: throws the first line error, annotated with its line number.
CanLog parse_log_strict(std::istream& in, std::string source_label);
CanLog parse_log_strict(std::string_view text, std::string source_label);
CanLog read_log_file(const std::string& path, std::string source_label);

/// Canonical single-line rendering (no trailing newline).
std::string format_frame(const CanFrame& frame);

void write_log(const CanLog& log, std::ostream& out);
std::string write_log(const CanLog& log);
void write_log_file(const CanLog& log, const std::string& path);

void sort_frames(std::vector<CanFrame>& frames);

}  // namespace canfp
