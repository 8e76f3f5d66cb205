import json
import logging
from pathlib import Path
from typing import Dict

from app.loader.matrix_format import PathLike
from app.models.types import Manifest, \
    UnlearnMode
from app.utils.error_handlers import BadDocument, \
    UnknownLabel

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


def manifest_to_document(manifest: Manifest) -> Dict:
    """Plain dict in a fixed key order; float lists keep repr precision through json."""
    document = {
        'version': MANIFEST_VERSION,
        'classes': list(manifest.classes),
        'domains': list(manifest.domains),
        'forget_classes': list(manifest.forget_classes),
        'unlearn_domains': list(manifest.unlearn_domains),
        'mode': manifest.mode.to_dict(),
        'embedding_dim': int(manifest.embedding_dim),
        'feature_dim': int(manifest.feature_dim),
        'seeds': {key: int(value) for key, value in manifest.seeds.items()},
        'encoder': dict(manifest.encoder),
        'text_embeddings': {name: [float(v) for v in vector] for name, vector in manifest.text_embeddings.items()},
        'domain_text_embeddings': {
            name: {domain: [float(v) for v in vector] for domain, vector in per_domain.items()}
            for name, per_domain in manifest.domain_text_embeddings.items()}}
    if manifest.synthetic is not None:
        synthetic = manifest.synthetic
        document['synthetic'] = {
            'prototypes': {name: [float(v) for v in vector] for name, vector in synthetic['prototypes'].items()},
            'domain_directions': {name: [float(v) for v in vector]
                                  for name, vector in synthetic['domain_directions'].items()},
            'domain_offset': float(synthetic['domain_offset'])}
        if 'generator' in synthetic:
            document['synthetic']['generator'] = dict(synthetic['generator'])
    return document


def check_name(label: str, name) -> str:
    """Reject names that cannot serve as a single file-name component."""
    if not isinstance(name, str) or not name.strip() or name in ('.', '..') \
            or any(sep in name for sep in ('/', '\\', '\0')):
        raise BadDocument(f"{label} name {name!r} must be a non-empty string without path separators",
                          payload={
                              'name': str(name)})
    return name


def manifest_from_document(document: Dict) -> Manifest:
    """
    Validate and build a Manifest.

    Raises:
        BadDocument: on missing keys, duplicate or path-unsafe names, or subsets
        that are not contained in the class/domain lists
    """
    if not isinstance(document, dict):
        raise BadDocument("manifest must be a JSON object")
    version = document.get('version',
                           MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise BadDocument(f"manifest version {version} is not supported")
    try:
        manifest = Manifest(classes=list(document['classes']),
                            domains=list(document['domains']),
                            forget_classes=list(document.get('forget_classes',
                                                             [])),
                            unlearn_domains=list(document.get('unlearn_domains',
                                                              [])),
                            mode=UnlearnMode.from_dict(document.get('mode',
                                                                    {'kind': 'global'})),
                            embedding_dim=int(document['embedding_dim']),
                            feature_dim=int(document['feature_dim']),
                            seeds=dict(document.get('seeds',
                                                    {})),
                            encoder=dict(document.get('encoder',
                                                      {})),
                            text_embeddings=dict(document.get('text_embeddings',
                                                              {})),
                            domain_text_embeddings=dict(document.get('domain_text_embeddings',
                                                                     {})),
                            synthetic=document.get('synthetic'))
    except (KeyError, TypeError, ValueError) as e:
        raise BadDocument(f"Malformed manifest: {str(e)}")

    for label, names in (('class', manifest.classes), ('domain', manifest.domains)):
        for name in names:
            check_name(label,
                       name)
        if len(set(names)) != len(names):
            raise BadDocument(f"manifest {label} names are not unique")
    try:
        for name in manifest.forget_classes:
            manifest.class_index(name)
        for name in manifest.unlearn_domains:
            manifest.domain_index(name)
        for name in manifest.mode.domains:
            manifest.domain_index(name)
    except UnknownLabel as e:
        raise BadDocument(f"manifest subset is not contained in its vocabulary: {e.message}")
    return manifest


def render_manifest(manifest: Manifest) -> str:
    return json.dumps(manifest_to_document(manifest),
                      indent=2,
                      ensure_ascii=False) + '\n'


def save_manifest(path: PathLike, manifest: Manifest) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True,
                        exist_ok=True)
    target.write_text(render_manifest(manifest),
                      encoding='utf-8')
    logger.info(f"Saved manifest with {len(manifest.classes)} classes and {len(manifest.domains)} domains to {target}")


def load_manifest(path: PathLike) -> Manifest:
    try:
        document = json.loads(Path(path).read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise BadDocument(f"manifest is not valid JSON: {str(e)}")
    return manifest_from_document(document)
