// Copyright 2026 The DCM Authors
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

// Convenience header pulling in the whole library.

#pragma once

#include "dcm/common.hpp"
#include "dcm/datagen.hpp"
#include "dcm/harness/config.hpp"
#include "dcm/harness/experiment.hpp"
#include "dcm/harness/report_io.hpp"
#include "dcm/losses.hpp"
#include "dcm/metrics.hpp"
#include "dcm/netcore.hpp"
#include "dcm/scoring.hpp"
#include "dcm/theory.hpp"
#include "dcm/training.hpp"
