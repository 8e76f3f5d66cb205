"""
Projection bank directory.

    bank.json                 mode, domains, targeted domains, rank removed,
                              forget classes, unlearning settings and
                              forget-row provenance
    projection.bin            W (float64)
    projection_<domain>.bin   W·P for each targeted domain (float64)
    projector_<domain>.bin    P for each targeted domain (float64)
"""
import json
import logging
from pathlib import Path
from typing import Dict

from app.loader.manifest_loader import check_name
from app.loader.matrix_format import PathLike, \
    load_matrix, \
    save_matrix
from app.models.types import UnlearnMode
from app.services.unlearning_service import ProjectionBank
from app.utils.error_handlers import BadDocument, \
    DimensionError

logger = logging.getLogger(__name__)

BANK_DOCUMENT = 'bank.json'
BASE_FILE = 'projection.bin'
BANK_VERSION = 1


def _entry_file(domain: str) -> str:
    return f"projection_{check_name('domain', domain)}.bin"


def _projector_file(domain: str) -> str:
    return f"projector_{check_name('domain', domain)}.bin"


def bank_document(bank: ProjectionBank) -> Dict:
    return {
        'version': BANK_VERSION,
        'mode': bank.mode.to_dict(),
        'domains': list(bank.domains),
        'targeted_domains': bank.targeted_domains,
        'forget_classes': list(bank.forget_classes),
        'settings': bank.settings,
        'rank_removed': {name: int(bank.rank_removed[name]) for name in bank.targeted_domains},
        'rows': {name: bank.provenance.get(name, []) for name in bank.targeted_domains}}


def save_bank(directory: PathLike, bank: ProjectionBank) -> Path:
    """Persist a bank; matrices are stored in float64 so annihilation survives reload."""
    target = Path(directory)
    files = {domain: (_entry_file(domain), _projector_file(domain)) for domain in bank.targeted_domains}
    target.mkdir(parents=True,
                 exist_ok=True)
    save_matrix(target / BASE_FILE,
                bank.base,
                'f64')
    for domain, (entry_file, projector_file) in files.items():
        save_matrix(target / entry_file,
                    bank.projection_for(domain),
                    'f64')
        if domain in bank.projectors:
            save_matrix(target / projector_file,
                        bank.projectors[domain],
                        'f64')
    (target / BANK_DOCUMENT).write_text(json.dumps(bank_document(bank),
                                                   indent=2,
                                                   ensure_ascii=False) + '\n',
                                        encoding='utf-8')
    logger.info(f"Saved {bank.mode.label()} projection bank to {target}")
    return target


def load_bank(directory: PathLike) -> ProjectionBank:
    """
    Reload a bank directory.

    Untargeted domains map to the very same base array, so their routing is
    identical to the original projection.

    Raises:
        BadDocument: if bank.json is missing or malformed
        FormatError: if a matrix file is malformed
    """
    source = Path(directory)
    try:
        document = json.loads((source / BANK_DOCUMENT).read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise BadDocument(f"{source} is not a projection bank: {BANK_DOCUMENT} is missing")
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise BadDocument(f"{BANK_DOCUMENT} is not valid JSON: {str(e)}")

    try:
        if document.get('version', BANK_VERSION) != BANK_VERSION:
            raise BadDocument(f"bank version {document.get('version')} is not supported")
        mode = UnlearnMode.from_dict(document['mode'])
        domains = list(document['domains'])
        targeted = list(document['targeted_domains'])
        rank_removed = {name: int(value) for name, value in document.get('rank_removed',
                                                                          {}).items()}
    except (KeyError, TypeError, ValueError) as e:
        raise BadDocument(f"Malformed {BANK_DOCUMENT}: {str(e)}")
    unknown = [name for name in targeted if name not in domains]
    if unknown:
        raise BadDocument(f"targeted domains {unknown} are not listed in the bank")

    base = load_matrix(source / BASE_FILE)
    entries = {name: base for name in domains}
    projectors = {}
    for domain in targeted:
        entry = load_matrix(source / _entry_file(domain))
        if entry.shape != base.shape:
            raise DimensionError(f"bank entry for '{domain}' has shape {entry.shape}, base is {base.shape}")
        entries[domain] = entry
        projector_path = source / _projector_file(domain)
        if projector_path.exists():
            projectors[domain] = load_matrix(projector_path)

    return ProjectionBank(base=base,
                          mode=mode,
                          domains=domains,
                          entries=entries,
                          rank_removed=rank_removed,
                          projectors=projectors,
                          provenance=dict(document.get('rows',
                                                       {})),
                          forget_classes=list(document.get('forget_classes',
                                                           [])),
                          settings=dict(document.get('settings',
                                                     {})))
