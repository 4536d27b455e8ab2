// SPDX-FileCopyrightText: Copyright (c) 2026 The promptmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace promptmt::ingest {

enum class Task { translate, infill };

std::string_view to_string(Task task);

/// One training or evaluation item. Translate examples carry their target;
/// infill examples acquire one when masked.
struct Example {
  std::string source_text;
  std::optional<std::string> target_text;
  Task task = Task::translate;
  std::string source_lang;
  std::string target_lang;
  std::string provenance;

  bool operator==(const Example&) const = default;
};

}  // namespace promptmt::ingest
