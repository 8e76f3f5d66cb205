import logging

import numpy as np
from flask import Blueprint, \
    current_app, \
    request
from flask_restx import Api, \
    fields

from .extensions import cache
from .loader.bank_loader import load_bank
from .loader.manifest_loader import load_manifest
from .services.database_service import DatabaseService
from .services.encoder_service import TextEmbedder
from .services.evaluation_service import classify_batch, \
    mia_score
from .utils.error_handlers import DimensionError, \
    UsageError

logger = logging.getLogger(__name__)
unlearning_blueprint = Blueprint("unlearning",
                                 __name__,
                                 url_prefix='/unlearning')
api = Api(unlearning_blueprint,
          title='Nullspace Unlearning API',
          version='1.0',
          description='Zero-shot classification through an unlearned projection bank',
          doc='/docs')

# Define models for Swagger documentation
error_model = api.model('Error',
                        {
                            'status': fields.String(description='Status of the response',
                                                    example='error'),
                            'message': fields.String(description='Error message',
                                                     example="Unknown domain 'clipart'"),
                            'code': fields.Integer(description='HTTP status code',
                                                   example=404),
                            'details': fields.Raw(description='Additional error details')})

success_model = api.model('Success',
                          {
                              'status': fields.String(description='Status of the response',
                                                      example='success'),
                              'data': fields.Raw(description='Response data'),
                              'message': fields.String(description='Success message',
                                                       required=False)})

classify_model = api.model('ClassifyRequest',
                           {
                               'features': fields.Raw(description='One pre-projection feature vector or a list of them',
                                                      required=True),
                               'domain': fields.String(description='Domain whose bank entry routes the features',
                                                       required=True,
                                                       example='photo')})

mia_model = api.model('MiaRequest',
                      {
                          'bf_forget': fields.Float(required=True,
                                                    example=100.0),
                          'af_forget': fields.Float(required=True,
                                                    example=5.01),
                          'bf_retain': fields.Float(required=True,
                                                    example=99.89),
                          'af_retain': fields.Float(required=True,
                                                    example=99.78)})


@cache.memoize(timeout=300)
def served_bank(bank_dir: str):
    logger.info(f"Loading projection bank from {bank_dir}")
    return load_bank(bank_dir)


@cache.memoize(timeout=300)
def served_manifest(manifest_path: str):
    logger.info(f"Loading manifest from {manifest_path}")
    return load_manifest(manifest_path)


def _json_body() -> dict:
    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        raise UsageError('Request body must be a JSON object')
    return body


@unlearning_blueprint.route("/bank",
                            methods=["GET"])
@api.doc('get_bank',
         responses={
             200: ('Success',
                   success_model),
             400: ('Malformed Bank',
                   error_model)})
def get_bank():
    """Summary of the served projection bank."""
    bank = served_bank(current_app.config['BANK_DIR'])
    return {
        'status': 'success',
        'data': bank.describe(),
        'message': f'Serving {bank.mode.label()} bank'}


@unlearning_blueprint.route("/classify",
                            methods=["POST"])
@api.doc('classify',
         body=classify_model,
         responses={
             200: ('Success',
                   success_model),
             400: ('Invalid Features',
                   error_model),
             404: ('Unknown Domain',
                   error_model)})
def classify():
    """Zero-shot predictions for features routed through the bank entry of a domain."""
    body = _json_body()
    domain = body.get('domain')
    if not isinstance(domain, str):
        raise UsageError("'domain' must be a domain name")
    try:
        features = np.atleast_2d(np.asarray(body.get('features'),
                                            dtype=np.float64))
    except (TypeError, ValueError):
        raise UsageError("'features' must be a list of numbers or a list of such lists")

    bank = served_bank(current_app.config['BANK_DIR'])
    manifest = served_manifest(current_app.config['MANIFEST_PATH'])
    if features.ndim != 2 or features.shape[1] != bank.base.shape[0]:
        raise DimensionError(f"features must have length {bank.base.shape[0]}, got shape {features.shape}")

    predictions = classify_batch(features,
                                 bank,
                                 domain,
                                 TextEmbedder(manifest).class_text_matrix(),
                                 current_app.config['COSINE_ZERO_TOL'])
    return {
        'status': 'success',
        'data': {
            'domain': domain,
            'targeted': bank.is_targeted(domain),
            'predictions': [{
                'index': int(index),
                'class': manifest.classes[int(index)]} for index in predictions]}}


@unlearning_blueprint.route("/mia",
                            methods=["POST"])
@api.doc('mia',
         body=mia_model,
         responses={
             200: ('Success',
                   success_model),
             400: ('Invalid Percentage',
                   error_model)})
def mia():
    """Forgetting-versus-retention gap from four accuracies."""
    body = _json_body()
    keys = ('bf_forget', 'af_forget', 'bf_retain', 'af_retain')
    missing = [key for key in keys if key not in body]
    if missing:
        raise UsageError(f"missing fields: {', '.join(missing)}")
    try:
        values = [float(body[key]) for key in keys]
    except (TypeError, ValueError):
        raise UsageError('accuracies must be numbers')
    return {
        'status': 'success',
        'data': {
            'mia': round(mia_score(*values),
                         2)}}


@unlearning_blueprint.route("/runs",
                            methods=["GET"])
@api.doc('list_runs',
         params={
             'limit': 'Maximum number of runs (default 20)'},
         responses={
             200: ('Success',
                   success_model)})
def list_runs():
    """Recent evaluation runs recorded in the ledger."""
    try:
        limit = int(request.args.get('limit',
                                     20))
    except ValueError:
        raise UsageError("'limit' must be an integer")
    if limit < 1:
        raise UsageError("'limit' must be positive")
    with DatabaseService() as db_service:
        runs = [run.to_dict() for run in db_service.list_runs(limit)]
    return {
        'status': 'success',
        'data': runs,
        'message': f'{len(runs)} runs'}
