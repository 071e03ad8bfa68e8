"""Ядро HopRel: построение цепочек документов, модели и обучение."""
