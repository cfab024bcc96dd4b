#pragma once

// Run-directory output helpers. Deterministic content (CSV/JSON) is kept
// strictly separate from wall-clock measurements, which go to the timing
// log: re-running a command with the same config and seed must reproduce
// every CSV/JSON byte.

#include <string>
#include <vector>

namespace tinyalign {

std::string csv_escape(const std::string& field);

class CsvBuilder {
public:
    void row(const std::vector<std::string>& fields);
    const std::string& str() const { return out_; }

private:
    std::string out_;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// artifacts.json: the machine-readable manifest of files a subcommand
// produced, relative to the run directory.
void write_artifacts(const std::string& dir, std::vector<std::string> files);

// timing.log: key,value lines of wall-clock measurements.
class TimingLog {
public:
    void add(const std::string& key, double seconds);
    void write(const std::string& dir) const;

private:
    std::string out_;
};

// Aligned-column text table for the human-readable reports.
std::string format_table(const std::vector<std::vector<std::string>>& rows);

}  // namespace tinyalign
