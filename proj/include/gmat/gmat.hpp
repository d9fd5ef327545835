#pragma once

#include "gmat/agent_pipeline.hpp"
#include "gmat/backend.hpp"
#include "gmat/bag_data.hpp"
#include "gmat/config.hpp"
#include "gmat/description_store.hpp"
#include "gmat/embedding.hpp"
#include "gmat/error.hpp"
#include "gmat/knowledge_base.hpp"
#include "gmat/metrics_report.hpp"
#include "gmat/mil_core.hpp"
#include "gmat/train.hpp"
#include "gmat/zero_shot.hpp"
