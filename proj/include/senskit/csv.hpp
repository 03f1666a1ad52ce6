// Minimal CSV emission/parsing. Writers buffer into a string and flush once
// so artifacts are atomic-ish and byte-deterministic.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "senskit/common.hpp"

namespace senskit {

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> header) { row(header); }
    CsvWriter() = default;

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += cells[i];
        }
        buf_ += '\n';
    }

    template <class... Ts>
    void row(const Ts&... cells) {
        (cell(cells), ...);
        endrow();
    }

    // Convenience for mixed rows built incrementally.
    CsvWriter& cell(const std::string& s) {
        if (!line_empty_) buf_ += ',';
        buf_ += s;
        line_empty_ = false;
        return *this;
    }
    CsvWriter& cell(double v) { return cell(format_double(v)); }
    CsvWriter& cell(int v) { return cell(std::to_string(v)); }
    CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }
    void endrow() {
        buf_ += '\n';
        line_empty_ = true;
    }

    const std::string& str() const { return buf_; }
    void save(const std::filesystem::path& path) const { write_file(path, buf_); }

  private:
    std::string buf_;
    bool line_empty_ = true;
};

// Splits one CSV line; no quoting support (none of our formats need it).
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::vector<std::vector<std::string>> rows;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) rows.push_back(split_csv_line(text.substr(start, end - start)));
        start = end + 1;
    }
    return rows;
}

}  // namespace senskit
