// Copyright 2026 The sdiar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "sdiar/annotation.hpp"
#include "sdiar/array_model.hpp"
#include "sdiar/beam_runtime.hpp"
#include "sdiar/config.hpp"
#include "sdiar/dmsnet.hpp"
#include "sdiar/embedding.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/fusion_cluster.hpp"
#include "sdiar/overlap_assign.hpp"
#include "sdiar/pipeline.hpp"
#include "sdiar/rttm.hpp"
#include "sdiar/scoring.hpp"
#include "sdiar/sdb_designer.hpp"
#include "sdiar/sim.hpp"
#include "sdiar/wav.hpp"
