#include "tinyalign/runio.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "tinyalign/common.hpp"

namespace fs = std::filesystem;

namespace tinyalign {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void CsvBuilder::row(const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out_.push_back(',');
        out_ += csv_escape(fields[i]);
    }
    out_.push_back('\n');
}

void write_text_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(ParseError::Kind::io, "cannot open for write: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ParseError(ParseError::Kind::io, "short write: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseError::Kind::io, "cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_artifacts(const std::string& dir, std::vector<std::string> files) {
    std::sort(files.begin(), files.end());
    nlohmann::json j{{"artifacts", files}};
    write_text_file((fs::path(dir) / "artifacts.json").string(), j.dump(2) + "\n");
}

void TimingLog::add(const std::string& key, double seconds) {
    out_ += key;
    out_.push_back(',');
    out_ += format_double(seconds);
    out_.push_back('\n');
}

void TimingLog::write(const std::string& dir) const {
    write_text_file((fs::path(dir) / "timing.log").string(), out_);
}

std::string format_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths;
    for (const auto& row : rows) {
        if (row.size() > widths.size()) widths.resize(row.size(), 0);
        for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    }
    std::string out;
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            out += row[i];
            if (i + 1 < row.size()) out.append(widths[i] - row[i].size() + 2, ' ');
        }
        out.push_back('\n');
    }
    return out;
}

}  // namespace tinyalign
