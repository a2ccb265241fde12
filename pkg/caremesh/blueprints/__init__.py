from caremesh.blueprints.federation import federation_bp
