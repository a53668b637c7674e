from .config import RunConfig, bench_config
from .metrics import Metrics, compute_metrics
from .stats import TTest, paired_ttest
from .pipeline import FoldReport, PipelineError, load_windows, loso_split, run_pipeline
from .study import StudyReport, study
