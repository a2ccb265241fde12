"""
Export Utilities Module
======================

Bulk export of a registry as flat, taxonomy-coded records:

- JSON: array of records, insertion order
- CSV: one row per record, fixed column order

Each record is what export_taxonomy_record produces, so field names follow
the offer raw form and the files can be fed back through the format service.
"""
import csv
import json
from typing import Any, Dict, List

from caremesh.errors import CaremeshError
from caremesh.models.registry import Registry, TaxonomyTable, export_taxonomy_record
from caremesh.utilities.logger import error, info

CSV_COLUMNS = ["record_id", "provider", "service_type", "taxonomy_code", "price", "quality",
               "provider_type", "endpoint"]
EXPORT_FORMATS = ("json", "csv")


def export_records(registry: Registry, table: TaxonomyTable, include_suspended: bool = False) -> List[Dict[str, str]]:
    """Flat records of the registry, ACTIVE only unless include_suspended."""
    records = registry.records() if include_suspended else registry.active_records()
    return [export_taxonomy_record(registry, r.record_id, table) for r in records]


def export_registry(registry: Registry, table: TaxonomyTable, file_path: str,
                    format_type: str = "json") -> Dict[str, Any]:
    """
    Write the registry's flat records to file_path.

    Args:
        registry: Registry to export
        table: Taxonomy table used to code the concepts
        file_path: Output file
        format_type: 'json' or 'csv'

    Returns:
        Dictionary with status information:
        - success: Boolean indicating if export was successful
        - file_path: Path to the exported file (if successful)
        - count: Number of records written (if successful)
        - message: Human-readable status message
    """
    format_type = format_type.lower()
    if format_type not in EXPORT_FORMATS:
        return {"success": False, "message": f"Unsupported export format: {format_type}"}

    try:
        rows = export_records(registry, table)
        with open(file_path, 'w', encoding='utf-8', newline='') as f:
            if format_type == "json":
                json.dump(rows, f, indent=2, sort_keys=True)
                f.write("\n")
            else:
                writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, restval="")
                writer.writeheader()
                writer.writerows(rows)
    except (OSError, CaremeshError) as e:
        error(f"Error exporting registry {registry.cc_id} as {format_type}: {e}")
        return {"success": False, "message": f"Error exporting registry as {format_type.upper()}: {e}"}

    info(f"Exported {len(rows)} records of {registry.cc_id} to {file_path}")
    return {
        "success": True,
        "file_path": file_path,
        "count": len(rows),
        "message": f"Registry exported successfully as {format_type.upper()}",
    }
