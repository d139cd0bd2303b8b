// Copyright 2026 the condret authors
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
#include "condret/file_io.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace condret {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kIndexOutOfRange: return "index-out-of-range";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kParse: return "parse-error";
    case ErrorKind::kReferentialIntegrity: return "referential-integrity";
    case ErrorKind::kNumerical: return "numerical-error";
    case ErrorKind::kContractViolation: return "contract-violation";
    case ErrorKind::kUndefinedMetric: return "undefined-metric";
    case ErrorKind::kMissingFile: return "missing-file";
    case ErrorKind::kIo: return "io-error";
  }
  return "unknown";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kMissingFile, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open '" + tmp + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) fail(ErrorKind::kIo, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "rename to '" + path + "' failed: " + ec.message());
}

}  // namespace condret
