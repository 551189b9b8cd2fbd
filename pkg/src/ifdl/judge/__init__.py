from ifdl.judge.client import HTTPJudgeProvider, JudgeTransportError, MockJudge
from ifdl.judge.protocol import (
    DecodingParams,
    JudgeMissingFieldError,
    JudgeParseError,
    JudgeRangeError,
    JudgeRequest,
    JudgeResponseError,
    JudgeScores,
    JudgeValidationError,
    PayloadTooLarge,
    aggregate_scores,
    build_judge_prompt,
    format_explanation,
    parse_judge_response,
    parse_pairwise_response,
)
from ifdl.judge.runner import JudgeOutcome, run_judge, summarize_outcomes, summarize_scores
from ifdl.judge.user_study import Vote, tally_user_study

__all__ = [
    "DecodingParams",
    "HTTPJudgeProvider",
    "JudgeMissingFieldError",
    "JudgeOutcome",
    "JudgeParseError",
    "JudgeRangeError",
    "JudgeRequest",
    "JudgeResponseError",
    "JudgeScores",
    "JudgeTransportError",
    "JudgeValidationError",
    "MockJudge",
    "PayloadTooLarge",
    "Vote",
    "aggregate_scores",
    "build_judge_prompt",
    "format_explanation",
    "parse_judge_response",
    "parse_pairwise_response",
    "run_judge",
    "summarize_outcomes",
    "summarize_scores",
    "tally_user_study",
]
