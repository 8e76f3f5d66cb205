import csv
import io
import json
import logging
from dataclasses import dataclass, \
    field
from typing import Dict, \
    List, \
    Optional, \
    Sequence

import numpy as np

from app.core.linalg import as_matrix, \
    normalize_rows
from app.models.types import LabeledEmbeddingSet, \
    Manifest
from app.services.unlearning_service import ProjectionBank
from app.utils.error_handlers import BadDocument, \
    DataError, \
    DimensionError, \
    InvalidPercentage, \
    UnknownLabel

logger = logging.getLogger(__name__)

PHASES = ('BF', 'AF')
SETS = ('retain', 'forget')
CSV_COLUMNS = ('mode', 'domain', 'set', 'phase', 'accuracy', 'mia')
TABLE_COLUMNS = ('selective_forget', 'domain', 'retain_bf', 'retain_af', 'forget_bf', 'forget_af', 'mia')
DEFAULT_COSINE_ZERO_TOL = 1e-10


def cosine_logits(embeddings, class_texts, zero_tol: float = DEFAULT_COSINE_ZERO_TOL) -> np.ndarray:
    """
    Cosine of every embedding with every class text.

    Zero embeddings have cosine 0 with everything, and values within zero_tol
    of zero are snapped to exactly 0 so annihilated logits tie exactly.
    """
    h = normalize_rows(np.atleast_2d(embeddings))
    texts = normalize_rows(as_matrix(class_texts,
                                     'class texts'))
    if h.shape[1] != texts.shape[1]:
        raise DimensionError(f"embeddings have length {h.shape[1]}, class texts have length {texts.shape[1]}")
    logits = h @ texts.T
    logits[np.abs(logits) <= zero_tol] = 0.0
    return logits


def classify_batch(features, bank: ProjectionBank, domain: str, class_texts,
                   zero_tol: float = DEFAULT_COSINE_ZERO_TOL) -> np.ndarray:
    """Argmax class index per feature row; ties go to the lowest class index."""
    features = np.atleast_2d(np.asarray(features,
                                        dtype=np.float64))
    if features.ndim != 2 or features.shape[1] != bank.base.shape[0]:
        raise DimensionError(f"features must have length {bank.base.shape[0]}, got shape {features.shape}")
    embeddings = bank.embed(features,
                            domain)
    return np.argmax(cosine_logits(embeddings,
                                   class_texts,
                                   zero_tol),
                     axis=1)


def classify(feature, bank: ProjectionBank, domain: str, class_texts,
             zero_tol: float = DEFAULT_COSINE_ZERO_TOL) -> int:
    """Zero-shot class index of one pre-projection feature routed through the bank."""
    return int(classify_batch(np.asarray(feature,
                                         dtype=np.float64).reshape(1,
                                                                   -1),
                              bank,
                              domain,
                              class_texts,
                              zero_tol)[0])


def _check_percentage(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 100.0 or np.isnan(value):
        raise InvalidPercentage(f"{name} must be a percentage in [0, 100], got {value}")
    return value


def mia_score(bf_forget: float, af_forget: float, bf_retain: float, af_retain: float) -> float:
    """(BF_forget − AF_forget) − (BF_retain − AF_retain)."""
    bf_forget = _check_percentage('bf_forget',
                                  bf_forget)
    af_forget = _check_percentage('af_forget',
                                  af_forget)
    bf_retain = _check_percentage('bf_retain',
                                  bf_retain)
    af_retain = _check_percentage('af_retain',
                                  af_retain)
    return (bf_forget - af_forget) - (bf_retain - af_retain)


@dataclass
class EvaluationReport:
    """BF/AF accuracies per (domain, set) plus per-domain MIA."""
    mode: Dict
    domains: List[str]
    accuracy: Dict[str, Dict[str, Dict[str, Optional[float]]]]
    mia: Dict[str, Optional[float]]
    counts: Dict[str, Dict[str, int]]
    config: Dict = field(default_factory=dict)
    label: str = ''

    def cell(self, phase: str, domain: str, subset: str) -> Optional[float]:
        return self.accuracy[phase][domain][subset]

    def to_document(self) -> Dict:
        """Deterministic structure with percentages rounded to 2 dp."""
        return {
            'label': self.label,
            'mode': self.mode,
            'config': self.config,
            'domains': list(self.domains),
            'counts': {domain: dict(self.counts.get(domain, {})) for domain in self.domains},
            'accuracy': {phase: {domain: {subset: _round(self.accuracy[phase][domain][subset]) for subset in SETS}
                                 for domain in self.domains} for phase in PHASES},
            'mia': {domain: _round(self.mia[domain]) for domain in self.domains}}

    @classmethod
    def from_document(cls, document: Dict) -> 'EvaluationReport':
        try:
            report = cls(mode=document['mode'],
                         domains=list(document['domains']),
                         accuracy=document['accuracy'],
                         mia=document['mia'],
                         counts=document.get('counts',
                                             {}),
                         config=document.get('config',
                                             {}),
                         label=document.get('label',
                                            ''))
            for domain in report.domains:
                for phase in PHASES:
                    for subset in SETS:
                        report.accuracy[phase][domain][subset]
                report.mia[domain]
        except (KeyError, TypeError) as e:
            raise BadDocument(f"Malformed evaluation report: missing {str(e)}")
        return report

    def render_document(self) -> str:
        return json.dumps(self.to_document(),
                          indent=2,
                          ensure_ascii=False) + '\n'

    def csv_rows(self) -> List[Dict]:
        mode_label = self.label or self.mode.get('kind', '')
        rows = []
        for domain in self.domains:
            for subset in SETS:
                for phase in PHASES:
                    accuracy = self.accuracy[phase][domain][subset]
                    if accuracy is None:
                        continue
                    rows.append({
                        'mode': mode_label,
                        'domain': domain,
                        'set': subset,
                        'phase': phase,
                        'accuracy': _format(accuracy),
                        'mia': _format(self.mia[domain])})
        return rows

    def render_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer,
                                fieldnames=CSV_COLUMNS,
                                lineterminator='\n')
        writer.writeheader()
        writer.writerows(self.csv_rows())
        return buffer.getvalue()


def _round(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(float(value), 2)


def _format(value: Optional[float]) -> str:
    return '' if value is None else f"{value:.2f}"


def _accuracy(predictions: np.ndarray, labels: np.ndarray) -> Optional[float]:
    if labels.size == 0:
        return None
    return 100.0 * float(np.count_nonzero(predictions == labels)) / labels.size


def evaluate(data: LabeledEmbeddingSet, bank: ProjectionBank, manifest: Manifest, class_texts,
             zero_tol: float = DEFAULT_COSINE_ZERO_TOL, config: Optional[Dict] = None,
             label: str = '') -> EvaluationReport:
    """
    BF accuracies through the original W and AF accuracies through the bank.

    Args:
        data: labeled pre-projection features
        bank: projection bank produced by unlearning
        manifest: defines the retain/forget partition and domain names
        class_texts: text embeddings of every manifest class, in manifest order
        zero_tol: cosine snapping tolerance
        config: provenance echoed into the report
        label: free-form run label

    Returns:
        EvaluationReport: per (domain, set) accuracies; empty cells are None
    """
    if len(data) == 0:
        raise DataError("evaluation set is empty")
    if data.features.ndim != 2 or data.features.shape[1] != bank.base.shape[0]:
        raise DimensionError(f"dataset features have shape {data.features.shape}, the bank expects {bank.base.shape[0]} columns")
    for name, labels, vocabulary in (('domain', data.domain_labels, manifest.domains),
                                     ('class', data.class_labels, manifest.classes)):
        if labels.shape[0] != len(data):
            raise DimensionError(f"{len(data)} samples but {labels.shape[0]} {name} labels")
        invalid = (labels < 0) | (labels >= len(vocabulary))
        if np.any(invalid):
            raise UnknownLabel(f"{int(np.count_nonzero(invalid))} samples carry {name} labels outside the manifest's {len(vocabulary)} {name}s",
                               payload={
                                   'first_invalid': int(labels[invalid][0])})
    texts = as_matrix(class_texts,
                      'class texts')
    if texts.shape[0] != len(manifest.classes):
        raise DimensionError(f"{texts.shape[0]} class texts for {len(manifest.classes)} manifest classes")

    forget_indices = np.asarray([manifest.class_index(name) for name in manifest.forget_classes],
                                dtype=np.int64)
    is_forget = np.isin(data.class_labels,
                        forget_indices)
    baseline = ProjectionBank.identity(bank.base,
                                       manifest.domains)

    accuracy = {phase: {} for phase in PHASES}
    counts: Dict[str, Dict[str, int]] = {}
    mia: Dict[str, Optional[float]] = {}
    for domain_index, domain in enumerate(manifest.domains):
        in_domain = data.domain_labels == domain_index
        features = data.features[in_domain]
        labels = data.class_labels[in_domain]
        forget_mask = is_forget[in_domain]
        counts[domain] = {
            'retain': int(np.count_nonzero(~forget_mask)),
            'forget': int(np.count_nonzero(forget_mask))}

        for phase, phase_bank in (('BF', baseline), ('AF', bank)):
            if features.shape[0]:
                predictions = classify_batch(features,
                                             phase_bank,
                                             domain,
                                             texts,
                                             zero_tol)
            else:
                predictions = np.empty(0,
                                       dtype=np.int64)
            accuracy[phase][domain] = {
                'retain': _accuracy(predictions[~forget_mask],
                                    labels[~forget_mask]),
                'forget': _accuracy(predictions[forget_mask],
                                    labels[forget_mask])}

        cells = [accuracy['BF'][domain]['forget'], accuracy['AF'][domain]['forget'],
                 accuracy['BF'][domain]['retain'], accuracy['AF'][domain]['retain']]
        mia[domain] = None if any(value is None for value in cells) else mia_score(*cells)
        logger.debug(f"{domain}: BF {accuracy['BF'][domain]} AF {accuracy['AF'][domain]} MIA {mia[domain]}")

    return EvaluationReport(mode=bank.mode.to_dict(),
                            domains=list(manifest.domains),
                            accuracy=accuracy,
                            mia=mia,
                            counts=counts,
                            config=dict(config or {}),
                            label=label or bank.mode.label())


def overall_accuracy(report: EvaluationReport, phase: str, domain: str) -> Optional[float]:
    """Accuracy over both sets of a domain, weighted by sample counts."""
    total = 0
    correct = 0.0
    for subset in SETS:
        value = report.accuracy[phase][domain][subset]
        count = report.counts.get(domain, {}).get(subset, 0)
        if value is not None and count:
            total += count
            correct += value * count
    return None if total == 0 else correct / total


def merge_reports_table(reports: Sequence[EvaluationReport]) -> str:
    """Summary table: one row per (run, domain) with retain/forget BF/AF and MIA."""
    buffer = io.StringIO()
    writer = csv.writer(buffer,
                        lineterminator='\n')
    writer.writerow(TABLE_COLUMNS)
    for report in reports:
        mode = report.mode or {}
        selective = '+'.join(mode.get('domains', [])) or mode.get('kind', '')
        for domain in report.domains:
            writer.writerow([selective,
                             domain,
                             _format(report.accuracy['BF'][domain]['retain']),
                             _format(report.accuracy['AF'][domain]['retain']),
                             _format(report.accuracy['BF'][domain]['forget']),
                             _format(report.accuracy['AF'][domain]['forget']),
                             _format(report.mia[domain])])
    return buffer.getvalue()
