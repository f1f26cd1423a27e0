#ifndef IUF_REPORT_HPP
#define IUF_REPORT_HPP

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "iuf/config.hpp"

namespace iuf {

struct StepRecord;
struct RunResult;

void write_report_json(const std::filesystem::path& path, const RunConfig& cfg, const RunResult& result,
                       const std::vector<std::string>& object_names);

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::string& config_hash_hex,
                    std::chrono::system_clock::time_point started,
                    const std::vector<std::string>& files);

}  // namespace iuf

#endif
