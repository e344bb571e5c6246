#include "canfp/can_log.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace canfp {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::uint32_t parse_hex(std::string_view tok, std::size_t max_digits, const char* what) {
  if (tok.size() < 3 || tok[0] != '0' || (tok[1] != 'x' && tok[1] != 'X') ||
      tok.size() - 2 > max_digits) {
    throw Error(Errc::malformed_line, std::string("bad ") + what + " '" + std::string(tok) + "'");
  }
  std::uint32_t v = 0;
  const auto* first = tok.data() + 2;
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v, 16);
  if (ec != std::errc{} || ptr != last) {
    throw Error(Errc::malformed_line, std::string("non-hex ") + what + " '" + std::string(tok) + "'");
  }
  return v;
}

std::int64_t parse_timestamp(std::string_view tok) {
  const auto dot = tok.find('.');
  const auto int_part = tok.substr(0, dot);
  std::int64_t secs = 0;
  auto [p1, e1] = std::from_chars(int_part.data(), int_part.data() + int_part.size(), secs);
  if (int_part.empty() || e1 != std::errc{} || p1 != int_part.data() + int_part.size() || secs < 0) {
    throw Error(Errc::malformed_line, "bad timestamp '" + std::string(tok) + "'");
  }
  std::int64_t micros = 0;
  if (dot != std::string_view::npos) {
    const auto frac = tok.substr(dot + 1);
    if (frac.empty() || frac.size() > 6) {
      throw Error(Errc::malformed_line, "bad timestamp fraction '" + std::string(tok) + "'");
    }
    for (char c : frac) {
      if (c < '0' || c > '9') throw Error(Errc::malformed_line, "bad timestamp '" + std::string(tok) + "'");
      micros = micros * 10 + (c - '0');
    }
    for (std::size_t i = frac.size(); i < 6; ++i) micros *= 10;
  }
  return secs * 1'000'000 + micros;
}

}  // namespace

CanFrame parse_frame_line(std::string_view line) {
  const auto fields = split_ws(line);
  if (fields.size() < 4) {
    throw Error(Errc::malformed_line, "expected at least 4 fields, got " + std::to_string(fields.size()));
  }
  CanFrame f;
  f.timestamp_us = parse_timestamp(fields[0]);

  const auto id = parse_hex(fields[1], 8, "can id");
  if (id > kMaxCanId) {
    throw Error(Errc::id_out_of_range, "can id " + std::string(fields[1]) + " exceeds 0x7ff");
  }
  f.can_id = id;

  if (fields[2] == "000") {
    f.req = false;
  } else if (fields[2] == "001") {
    f.req = true;
  } else {
    throw Error(Errc::malformed_line, "bad req field '" + std::string(fields[2]) + "'");
  }

  const auto len = parse_hex(fields[3], 1, "len");
  if (len > kMaxPayload) throw Error(Errc::malformed_line, "len " + std::to_string(len) + " > 8");

  const std::size_t n_bytes = fields.size() - 4;
  f.data.reserve(n_bytes);
  for (std::size_t i = 0; i < n_bytes; ++i) {
    f.data.push_back(static_cast<std::uint8_t>(parse_hex(fields[4 + i], 2, "data byte")));
  }
  if (n_bytes != len) {
    throw Error(Errc::length_mismatch,
                "len field " + std::to_string(len) + " but " + std::to_string(n_bytes) + " data bytes");
  }
  return f;
}

void sort_frames(std::vector<CanFrame>& frames) {
  std::stable_sort(frames.begin(), frames.end(),
                   [](const CanFrame& a, const CanFrame& b) { return a.timestamp_us < b.timestamp_us; });
}

ParseResult parse_log(std::istream& in, std::string source_label) {
  ParseResult res;
  res.log.source_label = std::move(source_label);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    try {
      res.log.frames.push_back(parse_frame_line(body));
    } catch (const Error& e) {
      res.errors.push_back(LineError{line_no, e.code(), e.what()});
    }
  }
  sort_frames(res.log.frames);
  return res;
}

ParseResult parse_log(std::string_view text, std::string source_label) {
  std::istringstream in{std::string(text)};
  return parse_log(in, std::move(source_label));
}

CanLog parse_log_strict(std::istream& in, std::string source_label) {
  auto res = parse_log(in, std::move(source_label));
  if (!res.errors.empty()) {
    const auto& e = res.errors.front();
    throw Error(e.code, "line " + std::to_string(e.line_no) + ": " + e.message);
  }
  return std::move(res.log);
}

CanLog parse_log_strict(std::string_view text, std::string source_label) {
  std::istringstream in{std::string(text)};
  return parse_log_strict(in, std::move(source_label));
}

CanLog read_log_file(const std::string& path, std::string source_label) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open log file " + path);
  return parse_log_strict(in, std::move(source_label));
}

std::string format_frame(const CanFrame& frame) {
  char buf[64];
  const auto secs = frame.timestamp_us / 1'000'000;
  const auto micros = frame.timestamp_us % 1'000'000;
  std::string out;
  out.reserve(40 + 5 * frame.data.size());
  std::snprintf(buf, sizeof buf, "%lld.%06lld 0x%04x %s 0x%zx", static_cast<long long>(secs),
                static_cast<long long>(micros), frame.can_id, frame.req ? "001" : "000", frame.data.size());
  out += buf;
  for (auto b : frame.data) {
    std::snprintf(buf, sizeof buf, " 0x%02x", b);
    out += buf;
  }
  return out;
}

void write_log(const CanLog& log, std::ostream& out) {
  for (const auto& f : log.frames) out << format_frame(f) << '\n';
  if (!out) throw Error(Errc::io_failure, "write failed");
}

std::string write_log(const CanLog& log) {
  std::ostringstream out;
  write_log(log, out);
  return out.str();
}

void write_log_file(const CanLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path + " for writing");
  write_log(log, out);
}

}  // namespace canfp
