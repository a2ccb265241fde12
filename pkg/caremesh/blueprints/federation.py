"""
Daemon HTTP surface of one coordination center.

/federation/frames speaks the wire protocol (NDJSON frames in, one answer
frame per request frame out) and /contracts binds requests this CC answered
for another CC. /ontology reads and changes this CC's knowledge base. The
other routes let local clients register offers and raise requests against
this CC.
"""
from flask import Blueprint, Response, current_app, jsonify, request

from caremesh.errors import FormatError, TransportError
from caremesh.models.descriptions import RawDescription, SourceKind, format_offer, format_request, offer_to_summary
from caremesh.models.knowledge_base import dump_knowledge_base
from caremesh.models.registry import TaxonomyTable
from caremesh.services.federation import candidate_to_summary
from caremesh.services.matcher import Forwarded, LocalCandidates
from caremesh.utilities.codec import decode_stream, encode_message
from caremesh.utilities.export import export_records
from caremesh.utilities.logger import info, warning

federation_bp = Blueprint('federation', __name__)


def _cc():
    return current_app.config['CC']


def _raw_from_body(default_kind: SourceKind):
    body = request.get_json(silent=True)
    if not isinstance(body, dict) or not isinstance(body.get("fields"), dict):
        raise FormatError("body must be a JSON object with a 'fields' object")
    raw = RawDescription(body.get("source_kind", default_kind.value),
                         {str(k): str(v) for k, v in body["fields"].items()})
    now = body.get("now", 0)
    if not isinstance(now, int) or now < 0:
        raise FormatError("now must be a non-negative integer", "now")
    return raw, now


@federation_bp.route('/federation/frames', methods=['POST'])
def frames():
    """Answer every MATCH_REQUEST frame in the body."""
    cc = _cc()
    answers = [encode_message(cc.handle_message(message)) for message in decode_stream(request.get_data())]
    return Response(b"".join(answers), mimetype="application/x-ndjson")


@federation_bp.route('/offers', methods=['POST'])
def register_offer():
    cc = _cc()
    raw, now = _raw_from_body(SourceKind.HUMAN_FORM)
    offer = format_offer(raw, cc.kb, lenient=cc.lenient)
    record_id = cc.registry.register(offer, now)
    return jsonify({"record_id": record_id, "offer": offer_to_summary(offer)}), 201


@federation_bp.route('/offers/<record_id>', methods=['DELETE'])
def unregister_offer(record_id):
    cc = _cc()
    now = request.args.get("now", default=0, type=int)
    record = cc.registry.unregister(record_id, now)
    cancelled = cc.contracts.cancel_for_record(record_id, now)
    return jsonify({
        "record": record.to_dict(),
        "cancelled": [c.contract_id for c in cancelled],
    })


@federation_bp.route('/requests', methods=['POST'])
def raise_request():
    """
    Resolve a request raised at this CC.

    Local matches are scheduled and bound here. Forwarded matches are bound
    by the responding CC, which this daemon asks over its transport.
    """
    cc = _cc()
    raw, now = _raw_from_body(SourceKind.HUMAN_FORM)
    service_request = format_request(raw, cc.kb, lenient=cc.lenient)
    outcome = cc.handle_request(service_request, current_app.config['HOP_LIMIT'])

    if isinstance(outcome, LocalCandidates):
        bound = cc.bind_candidates(service_request, outcome.candidates, now, origin_cc=cc.cc_id)
        if bound is None:
            return jsonify({"outcome": "LOCAL", "contract": None, "reason": "no feasible slot"})
        contract, reference, selection = bound
        info(f"[{cc.cc_id}] daemon bound {contract.contract_id} for {service_request.id}")
        return jsonify({
            "outcome": "LOCAL",
            "contract": contract.to_dict(),
            "invocation": reference.to_dict() if reference else None,
            "preempted": selection.preempted,
        })
    if isinstance(outcome, Forwarded):
        try:
            binding = cc.bind_remote(outcome.responder_cc, service_request, outcome.candidates, now)
        except TransportError as e:
            warning(f"[{cc.cc_id}] could not bind {service_request.id} at {outcome.responder_cc}: {e}")
            binding = {"contract": None, "invocation": None, "reason": f"responder unreachable: {e}"}
        return jsonify({
            "outcome": "FORWARDED",
            "responder": outcome.responder_cc,
            "candidates": [candidate_to_summary(c) for c in outcome.candidates],
            **binding,
        })
    return jsonify({"outcome": "NO_MATCH", "reason": outcome.reason, "visited": list(outcome.visited)})


@federation_bp.route('/contracts', methods=['POST'])
def accept_binding():
    """Bind a request this CC answered for another CC."""
    cc = _cc()
    body = request.get_json(silent=True)
    if not isinstance(body, dict) or not isinstance(body.get("fields"), dict):
        raise FormatError("body must be a JSON object with a 'fields' object")
    return jsonify(cc.accept_binding(body))


@federation_bp.route('/registry', methods=['GET'])
def registry():
    cc = _cc()
    return jsonify({"cc_id": cc.cc_id, "records": cc.registry.dump()})


@federation_bp.route('/health', methods=['GET'])
def health():
    cc = _cc()
    return jsonify({
        "status": "ok",
        "cc_id": cc.cc_id,
        "level": cc.level,
        "kb_version": cc.kb.version,
        "records": len(cc.registry),
    })


@federation_bp.route('/registry/export', methods=['GET'])
def registry_export():
    """Flat taxonomy-coded records of the ACTIVE offers."""
    cc = _cc()
    table = current_app.config.get('TAXONOMY') or TaxonomyTable({})
    return jsonify(export_records(cc.registry, table))


@federation_bp.route('/ontology', methods=['GET'])
def ontology():
    """Ontology-file form of the current knowledge base snapshot."""
    kb = _cc().kb
    return jsonify({"version": kb.version, **dump_knowledge_base(kb)})


@federation_bp.route('/ontology', methods=['POST'])
def mutate_ontology():
    """Apply one change such as {"op": "add_isa", "payload": {"child": ..., "parent": ...}}."""
    cc = _cc()
    body = request.get_json(silent=True)
    if not isinstance(body, dict) or "op" not in body or "payload" not in body:
        raise FormatError("body must be a JSON object with 'op' and 'payload'")
    kb = cc.mutate_kb(body["op"], body["payload"])
    return jsonify({"version": kb.version})
